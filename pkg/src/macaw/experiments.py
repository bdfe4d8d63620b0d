"""End-to-end pipelines shared by the command line and the acceptance checks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .codec import KernelParams, LatentCodec, decode, encode, fit_kpca
from .config import ExperimentConfig
from .datasets import (IMAGE_ATTRS, ImageGenSpec, ImageRecord, ScmTable, gen_images, gen_scm,
                       image_counterfactual_oracle, scm_counterfactual_oracle, scm_dag,
                       stratified_split)
from .errors import ConfigError
from .evalkit import (GaussianStats, cf_residuals, fit_probe, frechet_distance, gaussian_blur,
                      mae_by_gap, moment_report)
from .flow import MacawModel, build_model
from .graph import CausalDag, dag_from_edges, validate_dag
from .priors import Prior
from .queries import (ClassTask, GroupedModel, classify, counterfactual, grouped_counterfactual,
                      grouped_sample, map_estimate, sample)
from .trainer import TrainReport, train

log = logging.getLogger(__name__)


# -- graphs and priors ----------------------------------------------------------


def image_group_dag(block_size: int) -> CausalDag:
    """age -> bmi, sex -> bmi, and every demographic -> every latent of the block."""
    k = len(IMAGE_ATTRS)
    names = list(IMAGE_ATTRS) + [f"l{i}" for i in range(block_size)]
    A = np.zeros((k + block_size, k + block_size), dtype=np.int8)
    A[0, 2] = A[1, 2] = 1
    A[:k, k:] = 1
    return validate_dag(names, A)


def build_dag(cfg: ExperimentConfig) -> CausalDag:
    preset = cfg.graph.preset
    if preset == "scm":
        return scm_dag()
    if preset == "image":
        return image_group_dag(cfg.data.block_size)
    return dag_from_edges(cfg.graph.names, cfg.graph.edges)


def resolve_priors(cfg: ExperimentConfig, dag: CausalDag, X_train: np.ndarray) -> dict[str, Prior]:
    """Turn the ``[priors]`` tables into Prior objects; ``fit`` entries use the training rows."""
    out = {}
    for name, spec in cfg.resolved_priors().items():
        j = dag.index(name)
        spec = dict(spec)
        if spec.get("kind") == "fit":
            family = spec.get("family")
            if set(spec) - {"kind", "family"}:
                raise ConfigError(f"[priors].{name}: fit priors take only 'family'")
            out[name] = Prior.fit_discrete(X_train[:, j], family)
        else:
            out[name] = Prior.from_dict(spec)
    return out


def build_flow(cfg: ExperimentConfig, dag: CausalDag, priors: dict, seed: int) -> MacawModel:
    f = cfg.flow
    return build_model(dag, priors, num_layers=f.num_layers, num_hidden_layers=f.num_hidden_layers,
                       hidden_multiple=f.hidden_multiple or None,
                       min_hidden_units=f.min_hidden_units, seed=seed, s_cap=f.s_cap,
                       freeze_sources=f.freeze_sources)


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


# -- tabular benchmark -----------------------------------------------------------


@dataclass
class ScmData:
    table: ScmTable
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def train(self) -> np.ndarray:
        return self.table.data[self.train_idx]

    @property
    def test(self) -> np.ndarray:
        return self.table.data[self.test_idx]


def scm_data(cfg: ExperimentConfig) -> ScmData:
    """Generate the table and split it: the first rows of a seeded shuffle train."""
    d = cfg.data
    table = gen_scm(d.n, d.seed, d.scm_variant)
    perm = np.random.default_rng(np.uint64(_seed(d.seed, 2))).permutation(d.n)
    n_test = int(round(d.test_fraction * d.n))
    return ScmData(table, np.sort(perm[n_test:]), np.sort(perm[:n_test]))


def fit_tabular(cfg: ExperimentConfig, X_train: np.ndarray) -> tuple[MacawModel, TrainReport]:
    dag = build_dag(cfg)
    model = build_flow(cfg, dag, resolve_priors(cfg, dag, X_train), cfg.train.seed)
    return train(model, X_train, cfg.train)


def scm_sample_moments(cfg: ExperimentConfig, model: MacawModel, seed: int = 0) -> dict:
    X = sample(model, cfg.eval.n_samples, seed)
    rep = moment_report(X, model.names)
    return {"mean": dict(zip(rep.names, rep.mean.tolist())),
            "var": dict(zip(rep.names, rep.var.tolist())), "samples": X}


def scm_counterfactual_eval(cfg: ExperimentConfig, model: MacawModel, data: ScmData) -> dict:
    e = cfg.eval
    j = model.dag.index(e.cf_variable)
    x_obs = data.test
    x_cf = counterfactual(model, x_obs, {j: e.cf_value})
    oracle = scm_counterfactual_oracle(x_obs, j, e.cf_value)
    rep = cf_residuals(x_obs, x_cf, bin_var=model.dag.index(e.bin_variable),
                       target_var=model.dag.index(e.target_variable), oracle=oracle,
                       bin_range=(e.bin_low, e.bin_high), n_bins=e.n_bins)
    return {"x_obs": x_obs, "x_cf": x_cf, "oracle": oracle, "report": rep}


# -- image pipeline --------------------------------------------------------------


@dataclass
class ImageData:
    images: np.ndarray
    attrs: np.ndarray
    record: ImageRecord
    train_idx: np.ndarray
    test_idx: np.ndarray
    codec: LatentCodec
    scores: np.ndarray       # raw codec scores of every image

    @property
    def latents(self) -> np.ndarray:
        return self.codec.standardize(self.scores)

    def table(self, idx) -> np.ndarray:
        """Flow-space rows ``[age, sex, bmi, standardized latents...]``."""
        return np.hstack([self.attrs[idx], self.latents[idx]])


def image_spec(cfg: ExperimentConfig) -> ImageGenSpec:
    return replace(ImageGenSpec(), **cfg.data.image)


def make_codec(cfg: ExperimentConfig, images: np.ndarray) -> LatentCodec:
    k = cfg.kpca
    kernel = KernelParams(k.degree, k.gamma or None, k.coef0)
    return fit_kpca(images, k.n_components, kernel, anchor_cap=k.anchor_cap, ridge=k.ridge,
                    seed=cfg.data.seed)


def image_data(cfg: ExperimentConfig) -> ImageData:
    d = cfg.data
    if cfg.kpca.n_components % d.block_size:
        raise ConfigError("[kpca].n_components must be a multiple of [data].block_size")
    images, attrs, record = gen_images(d.n, d.seed, image_spec(cfg))
    tr, te = stratified_split(attrs[:, 0], 1.0 - d.test_fraction, d.seed)
    codec = make_codec(cfg, images[tr])
    return ImageData(images, attrs, record, tr, te, codec, encode(codec, images))


def fit_image_groups(cfg: ExperimentConfig, data: ImageData) -> tuple[GroupedModel, list[TrainReport]]:
    B = cfg.data.block_size
    n_groups = cfg.kpca.n_components // B
    dag = image_group_dag(B)
    k = len(IMAGE_ATTRS)
    groups, reports = [], []
    full = data.table(data.train_idx)
    for g in range(n_groups):
        X = full[:, np.r_[0:k, k + g * B:k + (g + 1) * B]]
        priors = resolve_priors(cfg, dag, X)
        model = build_flow(cfg, dag, priors, _seed(cfg.train.seed, g))
        best, rep = train(model, X, cfg.train)
        log.info("group %d: best epoch %d, val nll %.4f", g, rep.best_epoch, min(rep.val_nll))
        groups.append(best)
        reports.append(rep)
    return GroupedModel(tuple(IMAGE_ATTRS), groups, B), reports


def nearest_support(values: np.ndarray, target: float) -> float:
    """Support value closest to ``target``; ties go to the smaller value."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    return float(values[np.argmin(np.abs(values - target))])


def latent_images(data: ImageData, latents: np.ndarray) -> np.ndarray:
    """Decode standardized latents to images."""
    return decode(data.codec, data.codec.unstandardize(latents))


def image_eval(cfg: ExperimentConfig, gmodel: GroupedModel, data: ImageData, seed: int = 0,
               with_oracle: bool = True) -> dict:
    """Classification, realism, effectiveness and do(sex) checks on the test split."""
    e = cfg.eval
    k = gmodel.num_shared
    tr, te = data.train_idx, data.test_idx
    X_te = data.table(te)
    true_age = data.attrs[te, 0]
    out: dict = {}

    # MAP classification with the first group
    first = gmodel.groups[0]
    c = first.dag.index(e.class_variable)
    candidates = first.priors[c].support_values()
    post = classify(first, X_te[:, gmodel.columns(0)], ClassTask(c, candidates))
    pred = map_estimate(post, candidates)
    baseline = np.median(data.attrs[tr, c])
    near = np.abs(candidates[None, :] - true_age[:, None]) <= 5
    out["classification"] = {
        "map_mae": float(np.mean(np.abs(pred - true_age))),
        "median_mae": float(np.mean(np.abs(baseline - true_age))),
        "mass_near": float(np.mean(np.sum(post * near, axis=1))),
        "predictions": pred, "posterior": post, "candidates": candidates,
    }

    # realism: Frechet distance of codec features against the training split
    ref = GaussianStats.fit(data.scores[tr])

    def fd(images) -> float:
        return frechet_distance(GaussianStats.fit(encode(data.codec, images)), ref)

    side = data.record.spec.side
    out["fd_test"] = frechet_distance(GaussianStats.fit(data.scores[te]), ref)
    out["fd_blur"] = fd(gaussian_blur(data.images[te], side, e.blur_sigma))

    probe = fit_probe(data.scores[tr], data.attrs[tr, 0], seed=seed, alphas=e.probe_alphas,
                      folds=e.probe_folds)
    out["probe_test_mae"] = float(np.mean(np.abs(probe.predict(data.scores[te]) - true_age)))
    center = float(np.median(data.attrs[tr, 0]))
    sweep = []
    preds, targets, actual = [], [], []
    for off in e.alpha_offsets:
        alpha = nearest_support(candidates, center + off)
        cf = grouped_counterfactual(gmodel, X_te, {"age": alpha})
        imgs = latent_images(data, cf[:, k:])
        feats = encode(data.codec, imgs)
        p = probe.predict(feats)
        row = {"alpha": alpha, "fd": frechet_distance(GaussianStats.fit(feats), ref),
               "mae": float(np.mean(np.abs(p - alpha)))}
        if with_oracle:
            oracle_imgs, _ = image_counterfactual_oracle(data.record.subset(te), {"age": alpha})
            row["fd_oracle"] = fd(oracle_imgs)
        sweep.append(row)
        preds.append(p)
        targets.append(np.full(len(p), alpha))
        actual.append(true_age)
    out["sweep"] = sweep
    out["gap"] = mae_by_gap(np.concatenate(preds), np.concatenate(targets), np.concatenate(actual),
                            [tuple(b) for b in e.gap_buckets])

    # do(sex) moves sampled BMI
    n = e.n_samples
    bmi = {}
    for value in (0.0, 1.0):
        draws = grouped_sample(gmodel, n, _seed(seed, 3), {"sex": value})
        bmi[value] = float(draws[:, 2].mean())
    out["do_sex_bmi"] = bmi
    return out
