"""Evaluation: sample moments, counterfactual residuals, Frechet distance, probe regressors."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.ndimage import gaussian_filter

from .errors import DimensionError, RankError, ShapeError


@dataclass
class MomentReport:
    names: tuple[str, ...]
    mean: np.ndarray
    var: np.ndarray
    count: int

    def as_rows(self) -> list[tuple[str, float, float]]:
        return [(n, float(m), float(v)) for n, m, v in zip(self.names, self.mean, self.var)]


def moment_report(samples, names: Sequence[str] | None = None) -> MomentReport:
    """Per-column mean and unbiased variance (two-pass, fixed column-wise summation)."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ShapeError("moment_report needs an N x D matrix with N >= 2")
    n = len(X)
    mean = np.add.reduce(X, axis=0) / n
    dev = X - mean
    var = np.add.reduce(dev * dev, axis=0) / (n - 1)
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    return MomentReport(names, mean, var, n)


@dataclass
class ResidualReport:
    abs_sum: np.ndarray            # per-variable sum over rows of |x_cf - x_obs|
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    bin_model: np.ndarray          # E[x_cf[target]] per bin
    bin_oracle: np.ndarray         # E[oracle[target]] per bin
    pearson: float                 # per-row correlation of model vs oracle target

    def bin_rel_error(self, min_count: int = 1) -> np.ndarray:
        ok = self.bin_counts >= min_count
        return np.abs(self.bin_model[ok] - self.bin_oracle[ok]) / np.abs(self.bin_oracle[ok])


def cf_residuals(x_obs, x_cf, *, bin_var: int, target_var: int, oracle=None,
                 bin_range=(-5.0, 15.0), n_bins: int = 10) -> ResidualReport:
    """Residual sums per variable and binned model-vs-oracle expectations.

    Rows are binned on the observed value of ``bin_var``; rows outside
    ``bin_range`` are ignored for the binned table and the correlation.
    """
    x_obs = np.asarray(x_obs, dtype=np.float64)
    x_cf = np.asarray(x_cf, dtype=np.float64)
    if x_obs.shape != x_cf.shape or x_obs.ndim != 2:
        raise ShapeError("observed and counterfactual tables must have equal N x D shapes")
    abs_sum = np.add.reduce(np.abs(x_cf - x_obs), axis=0)
    edges = np.linspace(bin_range[0], bin_range[1], n_bins + 1)
    counts = np.zeros(n_bins, dtype=int)
    b_model = np.full(n_bins, np.nan)
    b_oracle = np.full(n_bins, np.nan)
    pearson = float("nan")
    if oracle is not None:
        oracle = np.asarray(oracle, dtype=np.float64)
        v = x_obs[:, bin_var]
        which = np.digitize(v, edges) - 1
        inside = (v >= edges[0]) & (v <= edges[-1])
        which[v == edges[-1]] = n_bins - 1
        for k in range(n_bins):
            sel = inside & (which == k)
            counts[k] = int(sel.sum())
            if counts[k]:
                b_model[k] = x_cf[sel, target_var].mean()
                b_oracle[k] = oracle[sel, target_var].mean()
        pearson = float(np.corrcoef(x_cf[inside, target_var], oracle[inside, target_var])[0, 1])
    return ResidualReport(abs_sum, edges, counts, b_model, b_oracle, pearson)


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, features) -> "GaussianStats":
        F = np.asarray(features, dtype=np.float64)
        if F.ndim != 2 or len(F) < 2:
            raise ShapeError("need an N x d feature matrix with N >= 2")
        return cls(F.mean(axis=0), np.cov(F, rowvar=False).reshape(F.shape[1], F.shape[1]))


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})``.

    The trace of the product root equals the sum of square roots of the
    eigenvalues of ``S_a^{1/2} S_b S_a^{1/2}``, which is symmetric, so only
    symmetric eigendecompositions are needed.
    """
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise DimensionError(f"feature dimensions differ: {a.mean.shape} vs {b.mean.shape}")
    root_a = _psd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    w = linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_root = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    diff = a.mean - b.mean
    fd = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_root)
    return max(fd, 0.0)


def gaussian_blur(images, side: int, sigma: float = 1.0) -> np.ndarray:
    """Blur flattened square images with a Gaussian of ``sigma`` pixels."""
    X = np.asarray(images, dtype=np.float64).reshape(-1, side, side)
    out = np.stack([gaussian_filter(img, sigma=sigma, mode="nearest") for img in X])
    return out.reshape(len(X), side * side)


@dataclass
class Probe:
    """Ridge regressor on standardized features."""

    mean: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    intercept: float
    alpha: float

    def predict(self, features) -> np.ndarray:
        F = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return F @ self.coef + self.intercept


def _ridge(F, y, alpha):
    d = F.shape[1]
    return linalg.solve(F.T @ F + alpha * np.eye(d), F.T @ (y - y.mean()), assume_a="pos")


def fit_probe(features, targets, seed: int = 0,
              alphas: Sequence[float] = (0.1, 1.0, 10.0, 100.0, 1000.0), folds: int = 5) -> Probe:
    """Ridge probe with the penalty picked by seeded k-fold cross-validation (MAE)."""
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if F.ndim != 2 or len(F) != len(y):
        raise ShapeError("features must be N x d with N targets")
    if len(F) < 200:
        raise RankError(f"probe needs at least 200 rows, got {len(F)}")
    mean, scale = F.mean(axis=0), F.std(axis=0)
    live = scale > 1e-12
    if not live.any():
        raise RankError("probe design matrix has no varying column")
    scale = np.where(live, scale, 1.0)
    Fs = (F - mean) / scale
    fold = np.random.default_rng(np.uint64(seed)).permutation(len(F)) % folds
    best_alpha, best_err = None, np.inf
    for alpha in alphas:
        err = 0.0
        for k in range(folds):
            tr, va = fold != k, fold == k
            w = _ridge(Fs[tr], y[tr], alpha)
            err += np.abs(Fs[va] @ w + y[tr].mean() - y[va]).sum()
        if err < best_err:
            best_alpha, best_err = alpha, err
    coef = _ridge(Fs, y, best_alpha)
    return Probe(mean, scale, coef, float(y.mean()), float(best_alpha))


def effectiveness(probe: Probe, cf_features, alpha) -> float:
    """MAE of probe predictions against the counterfactual target value(s)."""
    F = np.asarray(cf_features, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != len(probe.coef):
        raise ShapeError(f"expected N x {len(probe.coef)} features, got {F.shape}")
    target = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (len(F),))
    return float(np.mean(np.abs(probe.predict(F) - target)))


def mae_by_gap(pred, target, actual, buckets: Sequence[tuple[float, float]]) -> list[tuple[float, float, int, float]]:
    """MAE of ``pred`` vs ``target`` grouped by ``|target - actual|`` buckets (inclusive)."""
    pred, target, actual = (np.asarray(v, dtype=np.float64) for v in (pred, target, actual))
    gap = np.abs(target - actual)
    out = []
    for lo, hi in buckets:
        sel = (gap >= lo) & (gap <= hi)
        mae = float(np.mean(np.abs(pred[sel] - target[sel]))) if sel.any() else float("nan")
        out.append((lo, hi, int(sel.sum()), mae))
    return out


def write_results(path: str | Path, rows: Sequence[Mapping[str, object]]) -> None:
    """Write a list of flat dicts as a CSV table (columns from the first row)."""
    rows = list(rows)
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow(row)
