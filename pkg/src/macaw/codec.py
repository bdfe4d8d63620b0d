"""Kernel PCA codec: images <-> low-dimensional latent scores.

The forward direction is textbook KPCA on a (sub)sample of anchor images. The
preimage is learned: a kernel ridge regression from standardized anchor scores
back to anchor pixels using the same polynomial kernel family.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, RankError, ShapeError

EIG_REL_FLOOR = 1e-10


@dataclass(frozen=True)
class KernelParams:
    degree: int = 3
    gamma: float | None = None   # None -> 1 / input dimension
    coef0: float = 1.0

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigError("kernel degree must be >= 1")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("kernel gamma must be > 0")

    def resolved(self, dim: int) -> "KernelParams":
        return KernelParams(self.degree, 1.0 / dim if self.gamma is None else self.gamma, self.coef0)

    def __call__(self, U, V) -> np.ndarray:
        return (self.gamma * (U @ V.T) + self.coef0) ** self.degree


@dataclass(eq=False)
class LatentCodec:
    anchors: np.ndarray          # M x P
    kernel: KernelParams         # pixel-space kernel (gamma resolved)
    col_mean: np.ndarray         # M, column means of the anchor kernel matrix
    grand_mean: float
    eigvecs: np.ndarray          # M x C
    eigvals: np.ndarray          # C, descending
    anchor_scores: np.ndarray    # M x C
    latent_mean: np.ndarray      # C
    latent_std: np.ndarray       # C
    preimage_kernel: KernelParams
    preimage_coef: np.ndarray    # M x P
    ridge: float
    recon_mse: float             # mean squared anchor reconstruction error at fit time

    @property
    def num_components(self) -> int:
        return len(self.eigvals)

    @property
    def num_pixels(self) -> int:
        return self.anchors.shape[1]

    def standardize(self, scores) -> np.ndarray:
        return (np.asarray(scores) - self.latent_mean) / self.latent_std

    def unstandardize(self, latents) -> np.ndarray:
        return np.asarray(latents) * self.latent_std + self.latent_mean

    def meta(self) -> dict:
        return {"kernel": asdict(self.kernel), "preimage_kernel": asdict(self.preimage_kernel),
                "grand_mean": self.grand_mean, "ridge": self.ridge, "recon_mse": self.recon_mse}


def fit_kpca(images, n_components: int, kernel: KernelParams | None = None,
             anchor_cap: int = 4000, ridge: float = 1.0, seed: int = 0) -> LatentCodec:
    X = np.asarray(images, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("images must be an N x P matrix")
    if not np.all(np.isfinite(X)):
        raise ShapeError("images contain non-finite values")
    N, P = X.shape
    C = int(n_components)
    if C < 1 or C > N:
        raise RankError(f"cannot extract {C} components from {N} images")
    if anchor_cap < C:
        raise ConfigError("anchor_cap must be at least the number of components")
    kernel = (kernel or KernelParams()).resolved(P)
    if N > anchor_cap:
        idx = np.sort(np.random.default_rng(np.uint64(seed)).choice(N, anchor_cap, replace=False))
        anchors = X[idx].copy()
    else:
        anchors = X.copy()
    M = len(anchors)

    K = kernel(anchors, anchors)
    col_mean = K.mean(axis=0)
    grand_mean = float(col_mean.mean())
    Kc = K - col_mean[None, :] - col_mean[:, None] + grand_mean
    Kc = 0.5 * (Kc + Kc.T)
    vals, vecs = linalg.eigh(Kc, subset_by_index=[M - C, M - 1])
    vals, vecs = vals[::-1], vecs[:, ::-1]
    top = linalg.eigh(Kc, eigvals_only=True, subset_by_index=[M - 1, M - 1])[0]
    if not np.all(vals > EIG_REL_FLOOR * top):
        kept = int(np.sum(vals > EIG_REL_FLOOR * top))
        raise RankError(f"only {kept} of {C} requested eigenvalues exceed the floor")
    # deterministic signs: largest-magnitude entry of each eigenvector is positive
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(C)])
    # C order throughout, so a reloaded codec runs the same BLAS reductions
    vecs = np.ascontiguousarray(vecs * flip)
    vals = np.ascontiguousarray(vals)

    scores = Kc @ (vecs / np.sqrt(vals))
    latent_mean = scores.mean(axis=0)
    latent_std = scores.std(axis=0)
    Z = (scores - latent_mean) / latent_std

    pre_kernel = KernelParams(kernel.degree, 1.0 / C, kernel.coef0)
    Kz = pre_kernel(Z, Z)
    coef = np.ascontiguousarray(linalg.solve(Kz + ridge * np.eye(M), anchors, assume_a="pos"))
    recon = np.clip(Kz @ coef, 0.0, 1.0)
    recon_mse = float(np.mean((recon - anchors) ** 2))
    return LatentCodec(anchors, kernel, col_mean, grand_mean, vecs, vals, scores, latent_mean,
                       latent_std, pre_kernel, coef, float(ridge), recon_mse)


def encode(codec: LatentCodec, images) -> np.ndarray:
    """Raw KPCA scores (N x C, or a C-vector for one image)."""
    X = np.asarray(images, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.ndim != 2 or X2.shape[1] != codec.num_pixels:
        raise ShapeError(f"expected images with {codec.num_pixels} pixels, got shape {X.shape}")
    Kn = codec.kernel(X2, codec.anchors)
    Kc = Kn - codec.col_mean[None, :] - Kn.mean(axis=1, keepdims=True) + codec.grand_mean
    scores = Kc @ (codec.eigvecs / np.sqrt(codec.eigvals))
    return scores[0] if single else scores


def decode(codec: LatentCodec, latents) -> np.ndarray:
    """Preimage of raw KPCA scores, clipped to [0, 1]."""
    S = np.asarray(latents, dtype=np.float64)
    single = S.ndim == 1
    S2 = S[None, :] if single else S
    if S2.ndim != 2 or S2.shape[1] != codec.num_components:
        raise ShapeError(f"expected {codec.num_components} latents, got shape {S.shape}")
    Z = codec.standardize(S2)
    Za = codec.standardize(codec.anchor_scores)
    out = np.clip(codec.preimage_kernel(Z, Za) @ codec.preimage_coef, 0.0, 1.0)
    return out[0] if single else out
