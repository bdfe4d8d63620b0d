"""The MACAW flow: a stack of affine layers whose parameters come from C-MADEs.

Direction convention: ``x = m_0`` is data, ``z = m_K`` lives in the prior space,
and each layer applies ``m_t = exp(s_t) * m_{t-1} + b_t`` with
``(s_t, b_t) = C_t(m_{t-1})``.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .conditioner import S_CAP, CMade, init_cmade
from .errors import ConfigError, NonFiniteError, ShapeError
from .graph import CausalDag, build_masks, hidden_multiple_for
from .priors import Prior


class MacawModel:
    def __init__(self, dag: CausalDag, layers: Sequence[CMade], priors: Sequence[Prior],
                 norm_stats=None, metadata: dict | None = None):
        if len(layers) < 1:
            raise ConfigError("a MACAW model needs at least one layer")
        if len(priors) != dag.dim:
            raise ConfigError(f"need {dag.dim} priors, got {len(priors)}")
        shapes = {tuple(p.shape for p in layer.params()) for layer in layers}
        if len(shapes) != 1:
            raise ConfigError("all layers must share one mask shape")
        for i, prior in enumerate(priors):
            if not dag.sources[i] and prior.kind != "standard_normal":
                raise ConfigError(
                    f"non-source variable {dag.names[i]!r} must use a standard_normal prior, "
                    f"got {prior.kind}"
                )
        if any(p.is_discrete for i, p in enumerate(priors)
               if not layers[0].freeze_sources and dag.sources[i]):
            raise ConfigError("discrete sources require frozen source transforms")
        self.dag = dag
        self.layers = list(layers)
        self.priors = list(priors)
        self.metadata = dict(metadata or {})
        if norm_stats is None:
            norm_stats = (np.zeros(dag.dim), np.ones(dag.dim))
        self.set_norm_stats(*norm_stats)

    @property
    def dim(self) -> int:
        return self.dag.dim

    @property
    def names(self) -> tuple[str, ...]:
        return self.dag.names

    @property
    def freeze_sources(self) -> bool:
        return self.layers[0].freeze_sources

    def set_norm_stats(self, mean, std) -> None:
        mean = np.asarray(mean, dtype=np.float64).copy()
        std = np.asarray(std, dtype=np.float64).copy()
        if mean.shape != (self.dim,) or std.shape != (self.dim,):
            raise ShapeError("norm stats must be D-vectors")
        std[~(std > 1e-12)] = 1.0
        self.norm_stats = (mean, std)
        for layer in self.layers:
            layer.in_mean = mean
            layer.in_std = std

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def param_masks(self) -> list[np.ndarray]:
        return [m for layer in self.layers for m in layer.param_masks()]

    def set_params(self, values) -> None:
        values = list(values)
        per = len(self.layers[0].params())
        if len(values) != per * len(self.layers):
            raise ShapeError("parameter list does not match the model layout")
        for k, layer in enumerate(self.layers):
            layer.set_params(values[k * per:(k + 1) * per])

    def num_params(self) -> int:
        return sum(layer.num_params() for layer in self.layers)

    def copy(self) -> "MacawModel":
        layers = []
        for layer in self.layers:
            new = CMade(layer.mask_set, layer.source_flags, s_cap=layer.s_cap,
                        freeze_sources=layer.freeze_sources)
            new.set_params([p.copy() for p in layer.params()])
            layers.append(new)
        return MacawModel(self.dag, layers, self.priors, self.norm_stats, self.metadata)


def build_model(dag: CausalDag, priors: Mapping[int | str, Prior] | Sequence[Prior] | None = None,
                *, num_layers: int = 10, num_hidden_layers: int = 3,
                hidden_multiple: int | None = None, min_hidden_units: int = 15,
                seed: int = 0, freeze_sources: bool = True, s_cap: float = S_CAP,
                metadata: dict | None = None) -> MacawModel:
    """Freshly initialized (identity) model.

    ``priors`` may be a full list or a mapping for a subset of variables; anything
    not given defaults to standard normal.
    """
    if priors is None:
        priors = {}
    if isinstance(priors, Mapping):
        full = [Prior() for _ in range(dag.dim)]
        for key, prior in priors.items():
            full[dag.index(key)] = prior
        priors = full
    if hidden_multiple is None:
        hidden_multiple = hidden_multiple_for(dag, min_hidden_units)
    masks = build_masks(dag, hidden_multiple, num_hidden_layers)
    seeds = np.random.SeedSequence(int(seed)).generate_state(num_layers, dtype=np.uint64)
    layers = [init_cmade(masks, int(s), dag.sources, s_cap=s_cap, freeze_sources=freeze_sources)
              for s in seeds]
    meta = {"num_layers": num_layers, "num_hidden_layers": num_hidden_layers,
            "hidden_multiple": hidden_multiple, "seed": int(seed), "s_cap": s_cap,
            "freeze_sources": freeze_sources}
    meta.update(metadata or {})
    return MacawModel(dag, layers, priors, metadata=meta)


def _rows(model: MacawModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != model.dim:
        raise ShapeError(f"expected rows of length {model.dim}, got shape {x.shape}")
    return x2, single


def forward_pass(model: MacawModel, x2: np.ndarray, keep_cache: bool = False):
    """Batched x -> z. Returns ``(z, logdet, caches)``; caches feed the trainer."""
    if not np.all(np.isfinite(x2)):
        raise NonFiniteError("non-finite flow input")
    m = x2
    logdet = np.zeros(len(x2))
    caches = []
    for layer in model.layers:
        s, b, cache = layer._forward(m)
        es = np.exp(s)
        if keep_cache:
            caches.append((m, es, cache))
        m = es * m + b
        logdet = logdet + s.sum(axis=1)
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(logdet))):
        raise NonFiniteError("flow produced non-finite values")
    return m, logdet, caches


def forward(model: MacawModel, x):
    """Map data to prior space; returns ``(z, logdet)`` with ``logdet = sum(s)``."""
    x2, single = _rows(model, x)
    z, logdet, _ = forward_pass(model, x2)
    return (z[0], logdet[0]) if single else (z, logdet)


def prior_log_prob(model: MacawModel, z2: np.ndarray) -> np.ndarray:
    total = np.zeros(len(z2))
    for i, prior in enumerate(model.priors):
        total = total + prior.log_prob(z2[:, i])
    return total


def log_prob(model: MacawModel, x):
    """Change-of-variables log-likelihood; ``-inf`` if a source is off its support."""
    x2, single = _rows(model, x)
    z, logdet, _ = forward_pass(model, x2)
    with np.errstate(invalid="ignore"):
        lp = prior_log_prob(model, z) + logdet
    lp = np.where(np.isnan(lp), -np.inf, lp)
    return lp[0] if single else lp


def _solve(model: MacawModel, z2: np.ndarray, clamp: Mapping[int, np.ndarray]) -> np.ndarray:
    """Recover x from z, optionally holding some data coordinates fixed.

    Variables are processed one depth level at a time; within a level every
    parent trajectory is already known, so each level costs K conditioner
    evaluations. A free variable is inverted from ``m_K`` down to ``m_0``; a
    clamped variable is pinned at ``m_0`` and pushed forward, giving the layer
    values consistent with its (possibly counterfactual) parents.
    """
    K, D = len(model.layers), model.dim
    traj = np.zeros((K + 1,) + z2.shape)
    traj[K] = z2
    groups = model.dag.level_groups()
    if model.freeze_sources:
        src = groups[0]
        traj[:, :, src] = z2[:, src]
        for j in src:
            if j in clamp:
                traj[:, :, j] = clamp[j]
        groups = groups[1:]
    for group in groups:
        free = [i for i in group if i not in clamp]
        fixed = [i for i in group if i in clamp]
        if free:
            for t in range(K, 0, -1):
                s, b, _ = model.layers[t - 1]._forward(traj[t - 1])
                traj[t - 1][:, free] = (traj[t][:, free] - b[:, free]) * np.exp(-s[:, free])
        if fixed:
            for j in fixed:
                traj[0][:, j] = clamp[j]
            for t in range(1, K + 1):
                s, b, _ = model.layers[t - 1]._forward(traj[t - 1])
                traj[t][:, fixed] = np.exp(s[:, fixed]) * traj[t - 1][:, fixed] + b[:, fixed]
    x = traj[0]
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("inverse flow overflowed")
    return x


def inverse(model: MacawModel, z):
    """Exact inverse of :func:`forward`."""
    z2, single = _rows(model, z)
    if not np.all(np.isfinite(z2)):
        raise NonFiniteError("non-finite flow input")
    x = _solve(model, z2, {})
    return x[0] if single else x


def inverse_clamped(model: MacawModel, z, clamp: Mapping[int, object]):
    """Inverse pass with data coordinates ``clamp[j]`` held fixed (scalars or per-row arrays)."""
    z2, single = _rows(model, z)
    if not np.all(np.isfinite(z2)):
        raise NonFiniteError("non-finite flow input")
    fixed = {int(j): np.broadcast_to(np.asarray(v, dtype=np.float64), (len(z2),))
             for j, v in clamp.items()}
    x = _solve(model, z2, fixed)
    return x[0] if single else x
