"""Command-line entry point: ``macaw <subcommand> [--config F] [--seed S] [--out DIR]``.

Exit status is 0 on success, 2 for configuration problems and 1 for any other
failure. Each run writes ``manifest.json`` (config echo, seeds, versions and
output digests) and ``config.toml`` into ``--out``; rerunning with that config
and seed regenerates the same files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_from_dict, dump_config, load_config
from .errors import ConfigError, MacawError, SupportError
from .flow import MacawModel

log = logging.getLogger("macaw")

COMMANDS = ("gen-data", "train", "sample", "intervene", "counterfactual", "classify", "eval",
            "grad-check")


class _Run:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, args, cfg: ExperimentConfig):
        self.args, self.cfg = args, cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        target = self.out / name
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def finish(self) -> None:
        (self.out / "config.toml").write_text(dump_config(self.cfg))
        digests = {}
        for name in sorted(set(self.files)):
            digests[name] = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
        manifest = {
            "command": self.args.command,
            "argv": self.args.argv,
            "seed": self.args.seed,
            "config": self.cfg.to_dict(),
            "versions": _versions(),
            "outputs": digests,
            **self.extra,
        }
        (self.out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _versions() -> dict:
    import scipy

    return {"macaw": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def parse_do(text: str) -> dict[str, float]:
    """``"x2=2"`` or ``"age=70,sex=1"`` -> mapping."""
    out = {}
    for part in text.split(","):
        name, sep, value = part.partition("=")
        if not sep or not name.strip():
            raise ConfigError(f"bad --do assignment {part!r}; expected name=value")
        try:
            out[name.strip()] = float(value)
        except ValueError as exc:
            raise ConfigError(f"bad --do value in {part!r}") from exc
    return out


def parse_rows(text: str | None, n: int) -> np.ndarray:
    if not text:
        return np.arange(n)
    idx = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        try:
            idx.extend(range(int(lo), int(hi)) if sep else [int(lo)])
        except ValueError as exc:
            raise ConfigError(f"bad --rows entry {part!r}") from exc
    idx = np.asarray(idx, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ConfigError(f"--rows out of range for {n} rows")
    return idx


# -- helpers shared by subcommands ------------------------------------------------


def _seed(args, default: int) -> int:
    return default if args.seed is None else int(args.seed)


def _load(path):
    from .persistence import load_model

    return load_model(path)


def _model_config(model) -> ExperimentConfig | None:
    doc = model.metadata.get("config") if hasattr(model, "metadata") else None
    return config_from_dict(doc) if doc else None


def _save_pngs(run: _Run, images: np.ndarray, side: int, prefix: str, limit: int) -> None:
    from PIL import Image

    for k, img in enumerate(images[:limit]):
        pix = np.round(np.clip(img.reshape(side, side), 0.0, 1.0) * 255).astype(np.uint8)
        Image.fromarray(pix).save(run.path(f"{prefix}{k:04d}.png"))


def _write_table(run: _Run, name: str, names, X) -> None:
    run.write_csv(name, list(names), X.tolist())


# -- subcommands -------------------------------------------------------------------


def cmd_gen_data(run: _Run) -> None:
    from . import experiments as ex
    from .persistence import save_model

    cfg = run.cfg
    cfg.data.seed = _seed(run.args, cfg.data.seed)
    if cfg.data.kind == "scm":
        data = ex.scm_data(cfg)
        _write_table(run, "scm.csv", data.table.names, data.table.data)
        _write_table(run, "scm_noise.csv", [f"n{j}" for j in range(5)], data.table.noise)
        run.write_csv("split.csv", ["row", "split"],
                      sorted([(int(i), "train") for i in data.train_idx]
                             + [(int(i), "test") for i in data.test_idx]))
        save_model(data.table, run.path("scm_table.macw"))
    else:
        from .datasets import IMAGE_ATTRS, gen_images

        images, attrs, record = gen_images(cfg.data.n, cfg.data.seed, ex.image_spec(cfg))
        images.astype("<f8").tofile(run.path("images.f64"))
        _write_table(run, "attributes.csv", IMAGE_ATTRS, attrs)
        save_model(record, run.path("noise_record.macw"))
        if run.args.png:
            _save_pngs(run, images, record.spec.side, "png/img", run.args.png)


def cmd_train(run: _Run) -> None:
    from . import experiments as ex
    from .persistence import save_model

    cfg = run.cfg
    cfg.train.seed = _seed(run.args, cfg.train.seed)
    echo = cfg.to_dict()
    if cfg.data.kind == "scm":
        data = ex.scm_data(cfg)
        model, report = ex.fit_tabular(cfg, data.train)
        model.metadata["config"] = echo
        save_model(model, run.path("model.macw"))
        report.write_table(run.path("train_log.csv"))
        reports = [report]
    else:
        data = ex.image_data(cfg)
        gmodel, reports = ex.fit_image_groups(cfg, data)
        gmodel.metadata["config"] = echo
        save_model(gmodel, run.path("model.macw"))
        save_model(data.codec, run.path("codec.macw"))
        for g, rep in enumerate(reports):
            rep.write_table(run.path(f"train_log_g{g}.csv"))
    run.extra["train"] = [{"best_epoch": r.best_epoch, "stopped_epoch": r.stopped_epoch,
                           "best_val_nll": min(r.val_nll), "skipped_steps": r.skipped_steps}
                          for r in reports]


def _require_model(run: _Run):
    if not run.args.model:
        raise ConfigError(f"{run.args.command} needs --model")
    model = _load(run.args.model)
    return model


def _decode_if_images(run: _Run, X: np.ndarray, k: int, prefix: str) -> None:
    if not (run.args.codec and run.args.png):
        return
    from .codec import decode

    codec = _load(run.args.codec)
    imgs = decode(codec, codec.unstandardize(X[:, k:]))
    _save_pngs(run, imgs, int(round(np.sqrt(codec.num_pixels))), prefix, run.args.png)


def _names(model) -> list[str]:
    if isinstance(model, MacawModel):
        return list(model.names)
    names = list(model.shared_names)
    for g, sub in enumerate(model.groups):
        names += [f"g{g}.{n}" for n in sub.names[model.num_shared:]]
    return names


def cmd_sample(run: _Run, intervention=None) -> None:
    from .queries import GroupedModel, grouped_sample, intervene_sample, sample

    model = _require_model(run)
    seed = _seed(run.args, 0)
    n = run.args.n or run.cfg.eval.n_samples
    if isinstance(model, GroupedModel):
        X = grouped_sample(model, n, seed, intervention)
        k = model.num_shared
    else:
        X = intervene_sample(model, intervention, n, seed) if intervention else sample(model, n, seed)
        k = len(model.names)
    _write_table(run, "samples.csv", _names(model), X)
    _decode_if_images(run, X, k, "png/sample")


def cmd_intervene(run: _Run) -> None:
    if not run.args.do:
        raise ConfigError("intervene needs --do")
    cmd_sample(run, parse_do(run.args.do))


def _test_rows(run: _Run, model):
    """Observed rows: --data CSV if given, else the test split regenerated from the config."""
    from . import experiments as ex

    if run.args.data:
        X = np.loadtxt(run.args.data, delimiter=",", skiprows=1, ndmin=2)
        return X, None
    cfg = run.cfg
    if cfg.data.kind == "scm":
        data = ex.scm_data(cfg)
        return data.test, data
    data = ex.image_data(cfg)
    return data.table(data.test_idx), data


def cmd_counterfactual(run: _Run) -> None:
    from .evalkit import cf_residuals
    from .queries import GroupedModel, counterfactual, grouped_counterfactual

    if not run.args.do:
        raise ConfigError("counterfactual needs --do")
    model = _require_model(run)
    assign = parse_do(run.args.do)
    X, _ = _test_rows(run, model)
    X = X[parse_rows(run.args.rows, len(X))]
    if isinstance(model, GroupedModel):
        cf = grouped_counterfactual(model, X, assign)
    else:
        cf = counterfactual(model, X, assign)
    names = _names(model)
    run.write_csv("counterfactual.csv", [f"{n}_obs" for n in names] + [f"{n}_cf" for n in names],
                  np.hstack([X, cf]).tolist())
    rep = cf_residuals(X, cf, bin_var=0, target_var=0)
    run.write_csv("residuals.csv", ["variable", "abs_diff_sum"],
                  [(n, float(v)) for n, v in zip(names, rep.abs_sum)])
    for n, v in zip(names, rep.abs_sum):
        print(f"{n}\t{v:.6g}")


def cmd_classify(run: _Run) -> None:
    from .queries import ClassTask, GroupedModel, classify, map_estimate

    model = _require_model(run)
    sub = model.groups[0] if isinstance(model, GroupedModel) else model
    var = run.args.var or run.cfg.eval.class_variable
    c = sub.dag.index(var)
    X, _ = _test_rows(run, model)
    if isinstance(model, GroupedModel):
        X = X[:, model.columns(0)]
    X = X[parse_rows(run.args.rows, len(X))]
    candidates = sub.priors[c].support_values()
    post = classify(sub, X, ClassTask(c, candidates))
    pred = map_estimate(post, candidates)
    run.write_csv("posterior.csv", ["row", "true", "map"] + [f"p_{v:g}" for v in candidates],
                  [[i, X[i, c], pred[i], *post[i]] for i in range(len(X))])
    mae = float(np.mean(np.abs(pred - X[:, c])))
    run.extra["map_mae"] = mae
    print(f"MAP MAE {mae:.4f} over {len(X)} rows")


def cmd_eval(run: _Run) -> None:
    from . import experiments as ex

    model = _require_model(run)
    cfg = run.cfg
    seed = _seed(run.args, 0)
    if cfg.data.kind == "scm":
        data = ex.scm_data(cfg)
        mom = ex.scm_sample_moments(cfg, model, seed)
        cf = ex.scm_counterfactual_eval(cfg, model, data)
        rep = cf["report"]
        rows = [{"variable": n, "sample_mean": mom["mean"][n], "sample_var": mom["var"][n],
                 "cf_abs_diff_sum": float(s)} for n, s in zip(model.names, rep.abs_sum)]
        summary = {"pearson": rep.pearson, "bin_counts": rep.bin_counts,
                   "bin_model": rep.bin_model, "bin_oracle": rep.bin_oracle}
    else:
        if not run.args.codec:
            raise ConfigError("image eval needs --codec")
        data = ex.image_data(cfg)
        res = ex.image_eval(cfg, model, data, seed)
        rows = [{"alpha": r["alpha"], "fd": r["fd"], "mae": r["mae"],
                 "fd_oracle": r.get("fd_oracle", float("nan"))} for r in res["sweep"]]
        summary = {k: v for k, v in res["classification"].items()
                   if k in ("map_mae", "median_mae", "mass_near")}
        summary.update(fd_test=res["fd_test"], fd_blur=res["fd_blur"], gap=res["gap"],
                       do_sex_bmi={str(k): v for k, v in res["do_sex_bmi"].items()},
                       probe_test_mae=res["probe_test_mae"])
    from .evalkit import write_results

    write_results(run.path("results.csv"), rows)
    run.write_json("summary.json", summary)


def cmd_grad_check(run: _Run) -> None:
    from . import experiments as ex
    from .trainer import grad_check

    cfg = run.cfg
    base = _seed(run.args, 0)
    dag = ex.build_dag(cfg)
    rows = []
    for k in range(run.args.trials):
        s = base + k
        rng = np.random.default_rng(np.uint64(s))
        model = ex.build_flow(cfg, dag, {}, s)
        for p, m in zip(model.params(), model.param_masks()):
            p[...] = rng.normal(0.0, 0.3, p.shape) * m
        x = rng.normal(size=(4, dag.dim))
        rows.append((s, grad_check(model, x)))
    run.write_csv("grad_check.csv", ["seed", "max_rel_error"], rows)
    worst = max(r[1] for r in rows)
    run.extra["max_rel_error"] = worst
    print(f"max relative error {worst:.3e} over {len(rows)} seeds")
    if worst > run.args.tol:
        raise MacawError(f"gradient check failed: {worst:.3e} > {run.args.tol:g}")


DISPATCH = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample,
            "intervene": cmd_intervene, "counterfactual": cmd_counterfactual,
            "classify": cmd_classify, "eval": cmd_eval, "grad-check": cmd_grad_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macaw", description="Causal normalizing-flow experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="experiment TOML (defaults: the model's own config)")
        s.add_argument("--seed", type=int, help="seed for this command's randomness")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--threads", type=int, default=0, help="BLAS threads (0 = library default)")
        if name in ("sample", "intervene", "counterfactual", "classify", "eval"):
            s.add_argument("--model", help="trained model container")
            s.add_argument("--codec", help="codec container (image runs)")
        if name in ("sample", "intervene"):
            s.add_argument("-n", type=int, default=0, help="number of draws (0 = [eval].n_samples)")
        if name in ("intervene", "counterfactual"):
            s.add_argument("--do", help='assignments such as "x2=2" or "age=70,sex=1"')
        if name in ("counterfactual", "classify"):
            s.add_argument("--data", help="CSV of observed rows (default: regenerated test split)")
            s.add_argument("--rows", help='row selection such as "0,4,10:20"')
        if name == "classify":
            s.add_argument("--var", help="class variable (default: [eval].class_variable)")
        if name in ("gen-data", "sample", "intervene"):
            s.add_argument("--png", type=int, default=0, help="also write this many PNG images")
        if name == "grad-check":
            s.add_argument("--trials", type=int, default=10)
            s.add_argument("--tol", type=float, default=1e-4)
    return p


def _error(msg: str) -> None:
    print(f"macaw: error: {msg}", file=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        model_cfg = None
        if args.config is None and getattr(args, "model", None):
            model_cfg = _model_config(_load(args.model))
        cfg = load_config(args.config) if args.config or model_cfg is None else model_cfg
        run = _Run(args, cfg)
        if args.threads > 0:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(args.threads):
                DISPATCH[args.command](run)
        else:
            DISPATCH[args.command](run)
        run.finish()
    except (ConfigError, SupportError) as exc:
        _error(str(exc))
        return 2
    except (MacawError, OSError, ValueError, KeyError, IndexError) as exc:
        _error(f"{type(exc).__name__}: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
