"""Causal queries on trained flows: sampling, interventions, counterfactuals, MAP classification."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, SupportError
from .flow import MacawModel, _rows, forward, inverse, inverse_clamped, log_prob


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def resolve_intervention(model: MacawModel, intervention: Mapping, n: int | None = None
                         ) -> dict[int, np.ndarray]:
    """Map variable names/indices to value arrays and validate discrete supports."""
    out = {}
    for key, value in intervention.items():
        j = model.dag.index(key)
        v = np.asarray(value, dtype=np.float64)
        if n is not None:
            if v.ndim > 1 or (v.ndim == 1 and len(v) != n):
                raise ShapeError(f"intervention on {model.names[j]!r} has {v.shape} values for {n} rows")
            v = np.broadcast_to(v, (n,))
        prior = model.priors[j]
        if model.dag.sources[j] and prior.is_discrete and not np.all(prior.in_support(v)):
            raise SupportError(f"value {value!r} is outside the support of {model.names[j]!r}")
        if not np.all(np.isfinite(v)):
            raise SupportError(f"non-finite intervention value for {model.names[j]!r}")
        out[j] = v
    return out


def sample(model: MacawModel, n: int, seed: int = 0) -> np.ndarray:
    """Draw every z_i from its prior and run the backward flow."""
    if n == 0:
        return np.zeros((0, model.dim))
    rng = _rng(seed)
    z = np.column_stack([prior.sample(rng, n) for prior in model.priors])
    return inverse(model, z)


def counterfactual(model: MacawModel, x_obs, intervention: Mapping, *, return_latents=False):
    """Abduction, action, prediction.

    1. ``z_obs = T(x_obs)``.
    2. For each intervened ``j``, ``z_j`` is replaced by coordinate ``j`` of the forward
       pass of ``x_obs`` with ``x_j := alpha``; all other coordinates keep ``z_obs``.
    3. ``x_cf = T^{-1}(z_cf)``, with the intervened data coordinates held at ``alpha``.

    The inverse in step 3 recomputes the layer values of each intervened variable
    from its counterfactual parents, which coincides with step 2 whenever those
    parents are not themselves affected by another assignment.
    """
    x2, single = _rows(model, x_obs)
    assign = resolve_intervention(model, intervention, len(x2))
    z_obs, _ = forward(model, x2)
    z_cf = z_obs.copy()
    if assign:
        x_mod = x2.copy()
        for j, v in assign.items():
            x_mod[:, j] = v
        z_mod, _ = forward(model, x_mod)
        for j in assign:
            z_cf[:, j] = z_mod[:, j]
    x_cf = inverse_clamped(model, z_cf, assign)
    for j, v in assign.items():
        x_cf[:, j] = v
    if single:
        x_cf, z_obs, z_cf = x_cf[0], z_obs[0], z_cf[0]
    return (x_cf, z_obs, z_cf) if return_latents else x_cf


def intervene_sample(model: MacawModel, intervention: Mapping, n: int, seed: int = 0) -> np.ndarray:
    """Interventional draw: fresh prior samples pushed through a counterfactual."""
    resolve_intervention(model, intervention)
    x = sample(model, n, seed)
    if n == 0:
        return x
    return counterfactual(model, x, intervention)


@dataclass
class ClassTask:
    class_var: int | str
    candidates: Sequence[float]


def classify(model: MacawModel, features, task: ClassTask) -> np.ndarray:
    """Posterior over ``task.candidates`` for each row (Bayes with the flow's joint density).

    ``features`` are full rows; the class coordinate is overwritten per candidate.
    Returns an ``(N, R)`` array, or an ``R``-vector for a single row.
    """
    c = model.dag.index(task.class_var)
    if not model.dag.sources[c]:
        raise ConfigError(f"class variable {model.names[c]!r} must be a source")
    candidates = np.asarray(task.candidates, dtype=np.float64)
    prior = model.priors[c]
    if not np.all(prior.in_support(candidates)):
        raise SupportError("candidate outside the class variable's prior support")
    x2, single = _rows(model, features)
    logp = np.empty((len(x2), len(candidates)))
    x_c = x2.copy()
    for r, value in enumerate(candidates):
        x_c[:, c] = value
        logp[:, r] = log_prob(model, x_c)
    top = logp.max(axis=1, keepdims=True)
    post = np.exp(logp - top)
    post /= post.sum(axis=1, keepdims=True)
    return post[0] if single else post


def map_estimate(posterior, candidates) -> np.ndarray:
    """Maximum a-posteriori candidate; ties go to the smallest candidate value."""
    post = np.atleast_2d(posterior)
    candidates = np.asarray(candidates, dtype=np.float64)
    order = np.argsort(candidates, kind="stable")
    best = order[np.argmax(post[:, order], axis=1)]
    out = candidates[best]
    return out[0] if np.ndim(posterior) == 1 else out


# -- multi-group models ---------------------------------------------------------


@dataclass
class GroupedModel:
    """Several flows sharing demographic variables, each owning one latent block.

    The full vector is laid out as ``[shared..., block_1..., block_2..., ...]`` and
    each group model sees ``[shared..., block_g...]``.
    """

    shared_names: tuple[str, ...]
    groups: list[MacawModel]
    block_size: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.shared_names)
        if not self.groups:
            raise ConfigError("a grouped model needs at least one group")
        for g, model in enumerate(self.groups):
            if model.names[:k] != tuple(self.shared_names):
                raise ConfigError(f"group {g} does not start with the shared variables")
            if model.dim != k + self.block_size:
                raise ConfigError(f"group {g} has {model.dim - k} latents, expected {self.block_size}")
        ref = self.groups[0]
        for model in self.groups[1:]:
            if not np.array_equal(model.dag.adjacency[:k, :k], ref.dag.adjacency[:k, :k]):
                raise ConfigError("groups disagree on the shared-variable graph")
            if [p.to_dict() for p in model.priors[:k]] != [p.to_dict() for p in ref.priors[:k]]:
                raise ConfigError("groups disagree on shared-variable priors")

    @property
    def num_shared(self) -> int:
        return len(self.shared_names)

    @property
    def full_dim(self) -> int:
        return self.num_shared + self.block_size * len(self.groups)

    def columns(self, g: int) -> np.ndarray:
        k, B = self.num_shared, self.block_size
        return np.concatenate([np.arange(k), k + g * B + np.arange(B)])


def _group_seeds(seed: int, n_groups: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(n_groups, np.uint64)]


def grouped_sample(gmodel: GroupedModel, n: int, seed: int = 0,
                   intervention: Mapping | None = None) -> np.ndarray:
    """Autoregressive sampling across groups.

    Group 1 draws the demographics (with ``intervention`` applied) and its block;
    each later group gets those demographics clamped through the intervention
    mechanism and contributes only its own block.
    """
    k = gmodel.num_shared
    seeds = _group_seeds(seed, len(gmodel.groups))
    first = gmodel.groups[0]
    if intervention:
        x1 = intervene_sample(first, intervention, n, seeds[0])
    else:
        x1 = sample(first, n, seeds[0])
    shared = x1[:, :k]
    blocks = [x1[:, k:]]
    clamp = {j: shared[:, j] for j in range(k)}
    for model, s in zip(gmodel.groups[1:], seeds[1:]):
        blocks.append(intervene_sample(model, clamp, n, s)[:, k:])
    return np.hstack([shared] + blocks)


def grouped_counterfactual(gmodel: GroupedModel, x_obs_full, intervention: Mapping) -> np.ndarray:
    """Per-group counterfactuals under one shared intervention, reassembled.

    Demographics in the result come from the first group's counterfactual.
    """
    X = np.atleast_2d(np.asarray(x_obs_full, dtype=np.float64))
    if X.shape[1] != gmodel.full_dim:
        raise ShapeError(f"expected rows of length {gmodel.full_dim}, got {X.shape[1]}")
    k = gmodel.num_shared
    parts = []
    for g, model in enumerate(gmodel.groups):
        cf = counterfactual(model, X[:, gmodel.columns(g)], intervention)
        parts.append(cf if g == 0 else cf[:, k:])
    out = np.hstack(parts)
    return out[0] if np.ndim(x_obs_full) == 1 else out
