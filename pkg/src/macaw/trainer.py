"""Maximum-likelihood training with validation early stopping."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergedError, NonFiniteError, ShapeError, SupportError
from .flow import MacawModel, forward_pass, prior_log_prob

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_epochs: int = 500
    patience: int = 20
    validation_fraction: float = 0.1
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    standardize_init: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    wall_time: float = 0.0
    skipped_steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def write_table(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_nll", "val_nll"])
            for k, (a, b) in enumerate(zip(self.train_nll, self.val_nll), start=1):
                w.writerow([k, repr(a), repr(b)])


def _check_batch(model: MacawModel, batch) -> np.ndarray:
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ShapeError(f"batch must be N x {model.dim}, got {X.shape}")
    return X


def nll_loss(model: MacawModel, batch) -> float:
    """Mean negative log-likelihood over rows."""
    X = _check_batch(model, batch)
    z, logdet, _ = forward_pass(model, X)
    with np.errstate(invalid="ignore"):
        loss = -float(np.mean(prior_log_prob(model, z) + logdet))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite NLL")
    return loss


def nll_and_grad(model: MacawModel, batch) -> tuple[float, list[np.ndarray]]:
    """Mean NLL and its exact gradient for every array in ``model.params()``."""
    X = _check_batch(model, batch)
    N = len(X)
    z, logdet, caches = forward_pass(model, X, keep_cache=True)
    with np.errstate(invalid="ignore"):
        loss = -float(np.mean(prior_log_prob(model, z) + logdet))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite NLL")
    gm = np.empty_like(z)
    for i, prior in enumerate(model.priors):
        gm[:, i] = -prior.grad_log_prob(z[:, i]) / N
    g_logdet = -1.0 / N
    per_layer = []
    for layer, (m_prev, es, cache) in zip(reversed(model.layers), reversed(caches)):
        gs = gm * es * m_prev + g_logdet
        grads, gm_in = layer._backward(cache, gs, gm)
        gm = gm * es + gm_in
        per_layer.append(grads)
    return loss, [g for grads in reversed(per_layer) for g in grads]


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, masks):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v, mask in zip(params, grads, self.m, self.v, masks):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p *= mask


class SGD:
    def __init__(self, params, lr, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, params, grads, masks):
        for p, g, vel, mask in zip(params, grads, self.vel, masks):
            vel *= self.momentum
            vel -= self.lr * g
            p += vel
            p *= mask


def split_indices(n: int, validation_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle; the last fraction of the shuffled order is validation."""
    perm = np.random.default_rng(np.uint64(seed)).permutation(n)
    n_val = max(1, int(round(n * validation_fraction)))
    return perm[:-n_val], perm[-n_val:]


def standardize_first_layer(model: MacawModel, X: np.ndarray) -> None:
    """Data-dependent init: set layer-1 output biases so every non-source maps to
    roughly zero mean and unit variance before the first gradient step."""
    layer = model.layers[0]
    mean, std = X.mean(axis=0), X.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    s = np.clip(-np.log(std), -0.95 * layer.s_cap, 0.95 * layer.s_cap)
    nonsrc = ~model.dag.sources
    layer.scale_b[nonsrc] = (layer.s_cap * np.arctanh(s / layer.s_cap))[nonsrc]
    layer.shift_b[nonsrc] = (-mean * np.exp(s))[nonsrc]


def _safe_nll(model, X) -> float:
    try:
        return nll_loss(model, X)
    except NonFiniteError:
        return float("inf")


def train(model: MacawModel, dataset, config: TrainConfig | None = None):
    """Fit ``model`` and return ``(best_model, report)``.

    The input model is not modified. The returned model holds the parameters of the
    epoch with the lowest validation NLL.
    """
    config = config or TrainConfig()
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ConfigError(f"dataset must be N x {model.dim}, got {X.shape}")
    if len(X) < 10 * config.batch_size:
        raise ConfigError(
            f"dataset has {len(X)} rows; need at least 10 * batch_size = {10 * config.batch_size}"
        )
    if not np.all(np.isfinite(X)):
        raise ConfigError("dataset contains non-finite values")
    for i, prior in enumerate(model.priors):
        if model.dag.sources[i] and not np.all(prior.in_support(X[:, i])):
            raise SupportError(f"column {model.names[i]!r} has values outside its prior support")

    start = time.perf_counter()
    tr_idx, va_idx = split_indices(len(X), config.validation_fraction, config.seed)
    X_tr, X_va = X[tr_idx], X[va_idx]

    work = model.copy()
    work.set_norm_stats(X_tr.mean(axis=0), X_tr.std(axis=0))
    if config.standardize_init:
        standardize_first_layer(work, X_tr)
    params, masks = work.params(), work.param_masks()
    if config.optimizer == "adam":
        opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    else:
        opt = SGD(params, config.learning_rate, config.momentum)

    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 1]))
    report = TrainReport()
    best_val, best_params, wait, bad_streak = float("inf"), [p.copy() for p in params], 0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(X_tr))
        for lo in range(0, len(order), config.batch_size):
            batch = X_tr[order[lo:lo + config.batch_size]]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = nll_and_grad(work, batch)
                ok = all(np.all(np.isfinite(g)) for g in grads)
            except NonFiniteError:
                ok = False
            if not ok:
                bad_streak += 1
                report.skipped_steps += 1
                if bad_streak >= 3:
                    raise DivergedError(f"three consecutive non-finite steps in epoch {epoch}")
                continue
            bad_streak = 0
            opt.step(params, grads, masks)

        with np.errstate(over="ignore", invalid="ignore"):
            tr_nll, va_nll = _safe_nll(work, X_tr), _safe_nll(work, X_va)
        report.train_nll.append(tr_nll)
        report.val_nll.append(va_nll)
        report.stopped_epoch = epoch
        if va_nll < best_val:
            best_val, best_params, wait = va_nll, [p.copy() for p in params], 0
            report.best_epoch = epoch
        else:
            wait += 1
        if epoch % 25 == 0 or epoch == 1:
            log.info("epoch %d train %.5f val %.5f best %.5f@%d", epoch, tr_nll, va_nll,
                     best_val, report.best_epoch)
        if wait >= config.patience:
            break

    work.set_params(best_params)
    work.metadata["train"] = asdict(config)
    report.wall_time = time.perf_counter() - start
    return work, report


def grad_check(model: MacawModel, x, step: float = 1e-5, floor: float = 1e-5) -> float:
    """Worst relative disagreement between analytic and central-difference gradients.

    The relative error of an entry is ``|a - n| / max(|a|, |n|, floor)``; the floor
    keeps entries whose true gradient is at roundoff level from dominating.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, grads = nll_and_grad(model, X)
    params, masks = model.params(), model.param_masks()
    worst = 0.0
    for p, g, mask in zip(params, grads, masks):
        flat, gflat, mflat = p.reshape(-1), g.reshape(-1), mask.reshape(-1)
        for k in range(flat.size):
            if mflat[k] == 0:
                if gflat[k] != 0.0:
                    return float("inf")
                continue
            orig = flat[k]
            flat[k] = orig + step
            up = nll_loss(model, X)
            flat[k] = orig - step
            down = nll_loss(model, X)
            flat[k] = orig
            num = (up - down) / (2.0 * step)
            err = abs(gflat[k] - num) / max(abs(gflat[k]), abs(num), floor)
            worst = max(worst, err)
    return worst
