"""Synthetic data with analytic ground truth.

Two generators live here:

* the five-variable structural causal model used for the tabular benchmark,
  together with its counterfactual oracle;
* a toy "brain slice" image generator whose demographic attributes (age, sex,
  BMI) causally drive simple rendered anatomy, with pinned noise so that exact
  counterfactual images can be re-rendered.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import CausalDag, dag_from_edges

SCM_NAMES = ("x0", "x1", "x2", "x3", "x4")
SCM_EDGES = (("x0", "x2"), ("x1", "x2"), ("x0", "x3"), ("x2", "x4"), ("x3", "x4"))
SCM_VARIANTS = ("uniform01", "uniform12")


def scm_dag() -> CausalDag:
    return dag_from_edges(SCM_NAMES, SCM_EDGES)


@dataclass
class ScmTable:
    """Generated rows plus the exogenous noise that produced them."""

    data: np.ndarray   # n x 5, columns x0..x4
    noise: np.ndarray  # n x 5, columns n0..n4
    variant: str

    names = SCM_NAMES


def scm_equations(noise: np.ndarray, do: dict[int, object] | None = None) -> np.ndarray:
    """Ancestral evaluation of the structural equations under optional hard interventions."""
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    do = do or {}
    n = len(noise)
    x = np.empty((n, 5))

    def put(j, value):
        x[:, j] = np.broadcast_to(np.asarray(do[j], dtype=np.float64), (n,)) if j in do else value

    put(0, noise[:, 0])
    put(1, noise[:, 1])
    put(2, 2.0 * x[:, 0] + x[:, 1] + noise[:, 2])
    put(3, 2.0 * x[:, 0] + noise[:, 3])
    put(4, 6.0 * x[:, 2] * x[:, 3] + noise[:, 4])
    return x


def gen_scm(n: int, seed: int, variant: str = "uniform12") -> ScmTable:
    """Sample ``n`` rows of the benchmark SCM.

    The normal noises are parameterized by standard deviation: n1 ~ N(1, 1),
    n2 ~ N(0, 2), n3 ~ N(0, 0.5), n4 ~ N(0, 0.1). ``variant`` selects the range of
    the uniform root noise n0: ``uniform01`` is U(0, 1), ``uniform12`` is U(1, 2).
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if variant not in SCM_VARIANTS:
        raise ConfigError(f"unknown SCM variant {variant!r}; expected one of {SCM_VARIANTS}")
    rng = np.random.default_rng(np.uint64(seed))
    lo = 0.0 if variant == "uniform01" else 1.0
    noise = np.column_stack([
        rng.uniform(lo, lo + 1.0, n),
        rng.normal(1.0, 1.0, n),
        rng.normal(0.0, 2.0, n),
        rng.normal(0.0, 0.5, n),
        rng.normal(0.0, 0.1, n),
    ])
    return ScmTable(scm_equations(noise), noise, variant)


def abduct_scm_noise(rows) -> np.ndarray:
    """Invert the structural equations: recover n0..n4 from observed rows."""
    x = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return np.column_stack([
        x[:, 0],
        x[:, 1],
        x[:, 2] - 2.0 * x[:, 0] - x[:, 1],
        x[:, 3] - 2.0 * x[:, 0],
        x[:, 4] - 6.0 * x[:, 2] * x[:, 3],
    ])


def scm_counterfactual_oracle(rows, j: int, alpha, noise=None) -> np.ndarray:
    """Ground-truth counterfactual rows under ``do(x_j = alpha)``.

    Noise is abducted from the rows unless recorded noise is supplied.
    """
    if not 0 <= int(j) < 5:
        raise IndexError(f"variable index {j} out of range")
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    noise = abduct_scm_noise(rows) if noise is None else np.atleast_2d(noise)
    return scm_equations(noise, {int(j): alpha})


def scm_analytic_moments(variant: str = "uniform12") -> dict[str, tuple[float, float]]:
    """Exact means and variances of x2, x3, x4 (computed with sympy)."""
    import sympy as sp

    lo = 0 if variant == "uniform01" else 1
    # raw moments of each independent noise, E[n^k] for k = 0..4
    u = [sp.Rational((lo + 1) ** (k + 1) - lo ** (k + 1), k + 1) for k in range(5)]

    def normal_moments(mu, sd):
        t = sp.Symbol("t")
        mgf = sp.exp(mu * t + sd ** 2 * t ** 2 / 2)
        return [sp.diff(mgf, t, k).subs(t, 0) for k in range(5)]

    moments = [u, normal_moments(1, 1), normal_moments(0, 2),
               normal_moments(0, sp.Rational(1, 2)), normal_moments(0, sp.Rational(1, 10))]
    n = sp.symbols("n0:5")
    x2 = 2 * n[0] + n[1] + n[2]
    x3 = 2 * n[0] + n[3]
    x4 = 6 * x2 * x3 + n[4]

    def expect(expr):
        poly = sp.Poly(sp.expand(expr), *n)
        total = sp.Integer(0)
        for powers, coeff in poly.terms():
            term = coeff
            for k, p in enumerate(powers):
                term *= moments[k][p]
            total += term
        return sp.nsimplify(total)

    out = {}
    for name, expr in (("x2", x2), ("x3", x3), ("x4", x4)):
        m1 = expect(expr)
        out[name] = (float(m1), float(expect(expr ** 2) - m1 ** 2))
    return out


# -- synthetic images ---------------------------------------------------------


@dataclass
class ImageGenSpec:
    """Parameters of the synthetic image generator (all plumbing constants).

    Demographics: age is uniform on ``age_min..age_max`` (integers), sex is
    Bernoulli(``p_male``) with 1 = male, and
    ``bmi = bmi_base + bmi_age * (age - bmi_age_center) + bmi_sex * sex + eps``.
    Rendering: an elliptical "head" of radius ``g_out(sex) + eta_out`` filled with
    a textured tissue intensity ``g_int(bmi)`` (the texture phase is per-subject
    noise), and a dark inner "ventricle"
    ellipse of radius ``g_in(age) + eta_in``; edges fall off with a sigmoid of
    width ``edge_width`` pixels.
    """

    side: int = 32
    age_min: int = 46
    age_max: int = 81
    p_male: float = 0.5
    bmi_base: float = 26.0
    bmi_age: float = 0.05
    bmi_age_center: float = 60.0
    bmi_sex: float = 1.5
    bmi_sd: float = 2.0
    r_out_female: float = 11.0
    r_out_male: float = 12.5
    r_out_sd: float = 0.8
    r_in_at_min_age: float = 2.0
    r_in_per_year: float = 0.07
    r_in_sd: float = 0.3
    aspect: float = 0.8
    tissue_base: float = 0.6
    tissue_per_bmi: float = 0.02
    texture_amp: float = 0.25
    texture_period: float = 4.0
    ventricle_level: float = 0.08
    edge_width: float = 0.35
    pixel_noise_sd: float = 0.02

    def __post_init__(self):
        if self.side < 4:
            raise ConfigError("image side must be >= 4")
        if self.age_max <= self.age_min:
            raise ConfigError("age_max must exceed age_min")
        for name in ("r_out_female", "r_out_male", "r_in_at_min_age", "edge_width",
                     "texture_period", "aspect"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.r_in_per_year <= 0:
            raise ConfigError("r_in_per_year must be positive (age enlarges the inner region)")
        if not 0.0 < self.p_male < 1.0:
            raise ConfigError("p_male must lie in (0, 1)")

    def ages(self) -> np.ndarray:
        return np.arange(self.age_min, self.age_max + 1, dtype=np.float64)

    def to_dict(self) -> dict:
        return asdict(self)

    # structural mean functions
    def g_out(self, sex):
        return np.where(np.asarray(sex) > 0.5, self.r_out_male, self.r_out_female)

    def g_in(self, age):
        return self.r_in_at_min_age + self.r_in_per_year * (np.asarray(age) - self.age_min)

    def g_int(self, bmi):
        return self.tissue_base + self.tissue_per_bmi * (np.asarray(bmi) - self.bmi_base)

    def bmi(self, age, sex, eps):
        return (self.bmi_base + self.bmi_age * (np.asarray(age) - self.bmi_age_center)
                + self.bmi_sex * np.asarray(sex) + eps)


IMAGE_ATTRS = ("age", "sex", "bmi")


def image_dag() -> CausalDag:
    """Demographic graph: age -> bmi, sex -> bmi."""
    return dag_from_edges(IMAGE_ATTRS, [("age", "bmi"), ("sex", "bmi")])


@dataclass
class ImageRecord:
    """Pinned exogenous state of every rendered image."""

    age: np.ndarray
    sex: np.ndarray
    bmi_eps: np.ndarray
    eta_out: np.ndarray
    eta_in: np.ndarray
    phase: np.ndarray           # n x 2 texture phase offsets (pixels)
    row_seeds: np.ndarray       # uint64 seed of each row's pixel-noise stream
    spec: ImageGenSpec = field(default_factory=ImageGenSpec)

    def __len__(self) -> int:
        return len(self.age)

    def attributes(self) -> np.ndarray:
        bmi = self.spec.bmi(self.age, self.sex, self.bmi_eps)
        return np.column_stack([self.age, self.sex, bmi])

    def subset(self, idx) -> "ImageRecord":
        return ImageRecord(self.age[idx], self.sex[idx], self.bmi_eps[idx], self.eta_out[idx],
                           self.eta_in[idx], self.phase[idx], self.row_seeds[idx], self.spec)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(getattr(self, k), dtype=np.float64)
                for k in ("age", "sex", "bmi_eps", "eta_out", "eta_in", "phase")}


def _row_seeds(seed: int, n: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed), 0x1A6E]).generate_state(n, dtype=np.uint64)


def render(spec: ImageGenSpec, age, sex, bmi, eta_out, eta_in, phase, row_seeds) -> np.ndarray:
    """Render flattened images (n x side*side) in [0, 1]."""
    age, sex, bmi = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (age, sex, bmi))
    eta_out, eta_in = np.atleast_1d(eta_out), np.atleast_1d(eta_in)
    n, side = len(age), spec.side
    r_out = np.maximum(spec.g_out(sex) + eta_out, 0.5)
    r_in = np.maximum(spec.g_in(age) + eta_in, 0.25)
    tissue = spec.g_int(bmi)

    c = (side - 1) / 2.0
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    # elliptical radius; the ellipse is wider than tall
    rho = np.sqrt((xx - c) ** 2 + ((yy - c) / spec.aspect) ** 2).reshape(-1)
    phase = np.atleast_2d(phase)
    w = 2 * np.pi / spec.texture_period
    xs, ys = xx.reshape(-1), yy.reshape(-1)
    texture = 1.0 + spec.texture_amp * (np.cos(w * (xs[None, :] - phase[:, :1]))
                                        * np.cos(w * (ys[None, :] - phase[:, 1:])))

    def soft(r):
        return 1.0 / (1.0 + np.exp(-(r[:, None] - rho[None, :]) / spec.edge_width))

    head = soft(r_out)
    vent = soft(r_in)
    img = head * (tissue[:, None] * texture * (1.0 - vent) + spec.ventricle_level * vent)
    noise = np.empty_like(img)
    for k, s in enumerate(np.asarray(row_seeds, dtype=np.uint64)):
        noise[k] = np.random.default_rng(s).standard_normal(side * side)
    return np.clip(img + spec.pixel_noise_sd * noise, 0.0, 1.0)


def gen_images(n: int, seed: int, spec: ImageGenSpec | None = None):
    """Return ``(images, attributes, record)``.

    ``images`` is n x side*side, ``attributes`` is n x 3 (age, sex, bmi).
    """
    spec = spec or ImageGenSpec()
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(np.uint64(seed))
    ages = spec.ages()
    record = ImageRecord(
        age=ages[rng.integers(0, len(ages), n)],
        sex=(rng.random(n) < spec.p_male).astype(np.float64),
        bmi_eps=rng.normal(0.0, spec.bmi_sd, n),
        eta_out=rng.normal(0.0, spec.r_out_sd, n),
        eta_in=rng.normal(0.0, spec.r_in_sd, n),
        phase=rng.uniform(0.0, spec.texture_period, (n, 2)),
        row_seeds=_row_seeds(seed, n),
        spec=spec,
    )
    attrs = record.attributes()
    images = render(spec, *attrs.T, record.eta_out, record.eta_in, record.phase, record.row_seeds)
    return images, attrs, record


def image_counterfactual_oracle(record: ImageRecord, intervention: dict[str, object]):
    """Re-render with pinned noise under ``do(...)`` on age / sex / bmi.

    Returns ``(images, attributes)``. Intervening on age or sex propagates to BMI
    through its structural equation with the recorded ``bmi_eps``.
    """
    unknown = set(intervention) - set(IMAGE_ATTRS)
    if unknown:
        raise ConfigError(f"cannot intervene on {sorted(unknown)}")
    spec, n = record.spec, len(record)

    def pick(name, default):
        if name in intervention:
            return np.broadcast_to(np.asarray(intervention[name], dtype=np.float64), (n,)).copy()
        return default

    age = pick("age", record.age)
    sex = pick("sex", record.sex)
    bmi = pick("bmi", spec.bmi(age, sex, record.bmi_eps))
    images = render(spec, age, sex, bmi, record.eta_out, record.eta_in, record.phase, record.row_seeds)
    return images, np.column_stack([age, sex, bmi])


def stratified_split(strata, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-stratum seeded split; returns sorted (train_idx, test_idx).

    Stratum quotas use largest-remainder rounding, so the train size is
    exactly ``round(train_fraction * N)``.
    """
    strata = np.asarray(strata)
    rng = np.random.default_rng(np.uint64(seed))
    values, counts = np.unique(strata, return_counts=True)
    share = train_fraction * counts
    quota = np.floor(share).astype(int)
    extra = int(round(train_fraction * len(strata))) - int(quota.sum())
    quota[np.argsort(-(share - quota), kind="stable")[:extra]] += 1
    train, test = [], []
    for value, k in zip(values, quota):
        idx = np.flatnonzero(strata == value)
        idx = idx[rng.permutation(len(idx))]
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
