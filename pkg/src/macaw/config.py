"""Experiment configuration: strict TOML sections with explicit defaults.

Sections are ``[graph] [priors] [flow] [train] [kpca] [data] [eval]``. Every key
a section accepts has a default here; any key not listed is rejected with a
``ConfigError`` that names it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .datasets import SCM_VARIANTS, ImageGenSpec
from .errors import ConfigError
from .trainer import TrainConfig

SECTIONS = ("graph", "priors", "flow", "train", "kpca", "data", "eval")


@dataclass
class GraphSection:
    # "scm": the five-variable benchmark graph; "image": demographics feeding
    # every latent of a block; "custom": explicit names/edges below
    preset: str = "scm"
    names: list = field(default_factory=list)
    edges: list = field(default_factory=list)

    def __post_init__(self):
        if self.preset not in ("scm", "image", "custom"):
            raise ConfigError(f"[graph].preset must be scm, image or custom, got {self.preset!r}")
        if self.preset == "custom" and not self.names:
            raise ConfigError("[graph].names is required for the custom preset")


@dataclass
class FlowSection:
    num_layers: int = 10
    num_hidden_layers: int = 3
    hidden_multiple: int = 0        # 0 = smallest multiple giving min_hidden_units per layer
    min_hidden_units: int = 15
    s_cap: float = 5.0
    freeze_sources: bool = True

    def __post_init__(self):
        if self.num_layers < 1 or self.num_hidden_layers < 1:
            raise ConfigError("[flow] needs at least one layer and one hidden layer")
        if self.hidden_multiple < 0 or self.min_hidden_units < 1:
            raise ConfigError("[flow].hidden_multiple must be >= 0 and min_hidden_units >= 1")
        if not self.s_cap > 0:
            raise ConfigError("[flow].s_cap must be > 0")


@dataclass
class KpcaSection:
    n_components: int = 120
    degree: int = 3
    gamma: float = 0.0              # 0 = 1 / pixel count
    coef0: float = 1.0
    anchor_cap: int = 4000
    ridge: float = 1.0

    def __post_init__(self):
        if self.n_components < 1 or self.degree < 1 or self.anchor_cap < 1:
            raise ConfigError("[kpca] counts must be >= 1")
        if self.gamma < 0 or not self.ridge > 0:
            raise ConfigError("[kpca].gamma must be >= 0 and ridge > 0")


@dataclass
class DataSection:
    kind: str = "scm"               # "scm" or "images"
    n: int = 10000
    seed: int = 7
    test_fraction: float = 0.3
    scm_variant: str = "uniform12"
    # image dataset
    block_size: int = 60
    image: dict = field(default_factory=dict)   # ImageGenSpec overrides

    def __post_init__(self):
        if self.kind not in ("scm", "images"):
            raise ConfigError(f"[data].kind must be scm or images, got {self.kind!r}")
        if self.n < 1 or self.block_size < 1:
            raise ConfigError("[data].n and block_size must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("[data].test_fraction must lie in (0, 1)")
        if self.scm_variant not in SCM_VARIANTS:
            raise ConfigError(f"[data].scm_variant must be one of {SCM_VARIANTS}")
        known = {f.name for f in fields(ImageGenSpec)}
        for key in self.image:
            if key not in known:
                raise ConfigError(f"unknown key [data.image].{key}")


@dataclass
class EvalSection:
    n_samples: int = 10000
    cf_variable: str = "x2"
    cf_value: float = 2.0
    bin_variable: str = "x2"
    target_variable: str = "x4"
    bin_low: float = -5.0
    bin_high: float = 15.0
    n_bins: int = 10
    class_variable: str = "age"
    alpha_offsets: list = field(default_factory=lambda: [-10.0, -5.0, 0.0, 5.0, 10.0])
    blur_sigma: float = 1.0
    probe_alphas: list = field(default_factory=lambda: [0.1, 1.0, 10.0, 100.0, 1000.0])
    probe_folds: int = 5
    gap_buckets: list = field(default_factory=lambda: [[0.0, 5.0], [10.0, 20.0]])
    ks_level: float = 0.01

    def __post_init__(self):
        if self.n_samples < 1 or self.n_bins < 1 or self.probe_folds < 2:
            raise ConfigError("[eval] counts out of range")
        if not self.bin_high > self.bin_low:
            raise ConfigError("[eval].bin_high must exceed bin_low")


@dataclass
class ExperimentConfig:
    graph: GraphSection = field(default_factory=GraphSection)
    # variable name -> prior table, e.g. {kind = "uniform", a = 1.0, b = 2.0} or
    # {kind = "fit", family = "categorical"} to estimate from the training split;
    # empty = the preset's defaults (see ``default_priors``)
    priors: dict = field(default_factory=dict)
    flow: FlowSection = field(default_factory=FlowSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    kpca: KpcaSection = field(default_factory=KpcaSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved_priors(self) -> dict:
        return dict(self.priors) if self.priors else default_priors(self)


def default_priors(cfg: ExperimentConfig) -> dict:
    if cfg.data.kind == "images":
        return {"age": {"kind": "fit", "family": "categorical"},
                "sex": {"kind": "fit", "family": "bernoulli"}}
    lo = 1.0 if cfg.data.scm_variant == "uniform12" else 0.0
    return {"x0": {"kind": "uniform", "a": lo, "b": lo + 1.0},
            "x1": {"kind": "normal", "mu": 1.0, "sigma": 1.0}}


def _section(cls, name: str, doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown key [{name}].{key}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    for key in doc:
        if key not in SECTIONS:
            raise ConfigError(f"unknown section [{key}]")
    priors = doc.get("priors", {})
    if not isinstance(priors, dict) or not all(isinstance(v, dict) for v in priors.values()):
        raise ConfigError("[priors] entries must be tables")
    return ExperimentConfig(
        graph=_section(GraphSection, "graph", doc.get("graph", {})),
        priors={k: dict(v) for k, v in priors.items()},
        flow=_section(FlowSection, "flow", doc.get("flow", {})),
        train=_section(TrainConfig, "train", doc.get("train", {})),
        kpca=_section(KpcaSection, "kpca", doc.get("kpca", {})),
        data=_section(DataSection, "data", doc.get("data", {})),
        eval=_section(EvalSection, "eval", doc.get("eval", {})),
    )


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Parse a TOML experiment file; ``None`` gives the all-defaults config."""
    if path is None:
        return ExperimentConfig()
    import tomli

    try:
        doc = tomli.loads(Path(path).read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + "}"
    raise ConfigError(f"cannot write {type(v).__name__} to TOML")


def dump_config(cfg: ExperimentConfig) -> str:
    """TOML text that ``load_config`` parses back to an equal config."""
    d = cfg.to_dict()
    out = []
    for name in SECTIONS:
        out.append(f"[{name}]")
        for key, value in d[name].items():
            out.append(f"{key} = {_toml_value(value)}")
        out.append("")
    return "\n".join(out)
