"""Per-variable base distributions of the flow."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SupportError

KINDS = ("standard_normal", "normal", "uniform", "bernoulli", "categorical")
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class Prior:
    kind: str = "standard_normal"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        k, p = self.kind, self.params
        if k not in KINDS:
            raise ConfigError(f"unknown prior kind {k!r}; expected one of {KINDS}")
        expected = {
            "standard_normal": set(),
            "normal": {"mu", "sigma"},
            "uniform": {"a", "b"},
            "bernoulli": {"p"},
            "categorical": {"support", "probs"},
        }[k]
        if set(p) != expected:
            raise ConfigError(f"{k} prior takes parameters {sorted(expected)}, got {sorted(p)}")
        if k == "normal" and not p["sigma"] > 0:
            raise ConfigError("normal prior needs sigma > 0")
        if k == "uniform" and not p["b"] > p["a"]:
            raise ConfigError("uniform prior needs b > a")
        if k == "bernoulli" and not 0.0 < p["p"] < 1.0:
            raise ConfigError("bernoulli prior needs p in (0, 1)")
        if k == "categorical":
            support = np.asarray(p["support"], dtype=np.float64)
            probs = np.asarray(p["probs"], dtype=np.float64)
            if support.ndim != 1 or support.shape != probs.shape or len(support) == 0:
                raise ConfigError("categorical support and probs must be equal-length lists")
            if np.any(np.diff(support) <= 0):
                raise ConfigError("categorical support must be strictly increasing")
            if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ConfigError("categorical probs must be positive and sum to 1")

    # -- constructors ------------------------------------------------------
    @classmethod
    def standard_normal(cls) -> "Prior":
        return cls()

    @classmethod
    def normal(cls, mu: float, sigma: float) -> "Prior":
        return cls("normal", {"mu": float(mu), "sigma": float(sigma)})

    @classmethod
    def uniform(cls, a: float, b: float) -> "Prior":
        return cls("uniform", {"a": float(a), "b": float(b)})

    @classmethod
    def bernoulli(cls, p: float) -> "Prior":
        return cls("bernoulli", {"p": float(p)})

    @classmethod
    def categorical(cls, support, probs) -> "Prior":
        return cls("categorical", {"support": [float(v) for v in support],
                                   "probs": [float(v) for v in probs]})

    @classmethod
    def fit_discrete(cls, values, kind: str) -> "Prior":
        """Empirical bernoulli / categorical prior from observed training values."""
        values = np.asarray(values, dtype=np.float64)
        if kind == "bernoulli":
            if not np.all((values == 0) | (values == 1)):
                raise SupportError("bernoulli data must be 0/1")
            return cls.bernoulli(float(values.mean()))
        if kind == "categorical":
            support, counts = np.unique(values, return_counts=True)
            return cls.categorical(support, counts / counts.sum())
        raise ConfigError(f"cannot fit a {kind} prior from data")

    @classmethod
    def from_dict(cls, d: dict) -> "Prior":
        d = dict(d)
        kind = d.pop("kind", "standard_normal")
        return cls(kind, d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    # -- queries -----------------------------------------------------------
    @property
    def is_discrete(self) -> bool:
        return self.kind in ("bernoulli", "categorical")

    def support_values(self) -> np.ndarray:
        if self.kind == "bernoulli":
            return np.array([0.0, 1.0])
        if self.kind == "categorical":
            return np.asarray(self.params["support"], dtype=np.float64)
        raise SupportError(f"{self.kind} prior has continuous support")

    def in_support(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "uniform":
            return (x >= self.params["a"]) & (x <= self.params["b"])
        if self.is_discrete:
            return np.isin(x, self.support_values())
        return np.isfinite(x)

    def log_prob(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k, p = self.kind, self.params
        if k == "standard_normal":
            return -0.5 * (x * x + _LOG_2PI)
        if k == "normal":
            u = (x - p["mu"]) / p["sigma"]
            return -0.5 * (u * u + _LOG_2PI) - math.log(p["sigma"])
        if k == "uniform":
            inside = self.in_support(x)
            return np.where(inside, -math.log(p["b"] - p["a"]), -np.inf)
        if k == "bernoulli":
            logp = np.where(x == 1.0, math.log(p["p"]), math.log1p(-p["p"]))
            return np.where((x == 0.0) | (x == 1.0), logp, -np.inf)
        support = np.asarray(p["support"])
        logs = np.log(np.asarray(p["probs"]))
        pos = np.clip(np.searchsorted(support, x), 0, len(support) - 1)
        return np.where(support[pos] == x, logs[pos], -np.inf)

    def grad_log_prob(self, x) -> np.ndarray:
        """Derivative of the log-density with respect to ``x`` (0 for flat/discrete)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "standard_normal":
            return -x
        if self.kind == "normal":
            return -(x - self.params["mu"]) / self.params["sigma"] ** 2
        return np.zeros_like(x)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k, p = self.kind, self.params
        if k == "standard_normal":
            return rng.standard_normal(n)
        if k == "normal":
            return p["mu"] + p["sigma"] * rng.standard_normal(n)
        if k == "uniform":
            return rng.uniform(p["a"], p["b"], n)
        if k == "bernoulli":
            return (rng.random(n) < p["p"]).astype(np.float64)
        idx = rng.choice(len(p["support"]), size=n, p=np.asarray(p["probs"]))
        return np.asarray(p["support"], dtype=np.float64)[idx]
