"""Command line interface: generate | fit | tune | predict | decide | sweep | audit.

Every command reads one TOML config (``--config``); flags override config
values.  Failures print one machine-parseable line

    distfair-error command=<cmd> kind=<kind> message=<json string>

on stderr, followed by human-readable detail, and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .audit import audit_report
from .basis import SplineConfig
from .datagen import CATEGORIES, DGPConfig, generate, write_generated
from .datamodel import Schema, load_csv
from .decision import (
    DecisionPolicy,
    decide_dataset,
    default_delta_grid,
    sweep,
    write_curves,
    write_routing,
)
from .families import LTU_THRESHOLD
from .model import ModelSpec, labels_for, load, predict_dataset, save
from .optimizer import FitConfig, default_grid, fit, tune_lambda

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("distfair")

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    path: Path | None
    raw: dict
    schema: Schema | None
    family: str
    spec_kwargs: dict
    fit: FitConfig
    tune_grid: list | None
    validation_fraction: float
    deltas: np.ndarray
    policy: DecisionPolicy
    dgp: DGPConfig
    top_n: int
    seed: int


def parse_delta_grid(text):
    """``"start:stop:step"`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        a, b, s = (float(v) for v in text.split(":"))
        if s <= 0:
            raise ValueError("delta grid step must be positive")
        n = int(math.floor((b - a) / s + 1e-9)) + 1
        return np.round(a + s * np.arange(n), 10)
    return np.array([float(v) for v in text.split(",") if v.strip()])


def _get(d, key, default=None):
    cur = d
    for part in key.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return default
        cur = cur[part]
    return cur


def _dgp_from(raw, problems):
    gen = dict(_get(raw, "generate", {}) or {})
    names = {f.name for f in fields(DGPConfig)}
    unknown = sorted(set(gen) - names - {"group_mu_values", "group_sigma2_values"})
    if unknown:
        problems.append(f"[generate] unknown keys {unknown}")
    kw = {k: v for k, v in gen.items() if k in names}
    for key in ("group_mu", "group_sigma2"):
        vals = gen.get(f"{key}_values")
        if vals is not None:
            if any(v <= 0 for v in vals):
                problems.append(f"[generate] {key}_values must be positive")
            else:
                kw[key] = [math.log(v) for v in vals]
    try:
        return DGPConfig(**kw)
    except (TypeError, ValueError) as e:
        problems.append(f"[generate] {e}")
        return DGPConfig()


def load_config(path=None, overrides=None):
    """Parse and validate a run config; all problems are reported together."""
    raw = {}
    problems = []
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as e:
            raise ConfigError([f"cannot read config {path}: {e}"]) from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError([f"invalid TOML in {path}: {e}"]) from e
    overrides = overrides or {}

    seed = overrides.get("seed", raw.get("seed", 0))
    if not isinstance(seed, int) or seed < 0:
        problems.append("seed must be a non-negative integer")
        seed = 0

    dgp = _dgp_from(raw, problems)
    dgp = replace(dgp, seed=seed)

    family = overrides.get("family") or raw.get("family", "gamma")
    if family not in ("gamma", "bernoulli"):
        problems.append(f"family must be 'gamma' or 'bernoulli', got {family!r}")

    sch = _get(raw, "schema", {}) or {}
    default_outcome = ("duration", "duration") if family != "bernoulli" else ("ltu", "binary")
    sensitive = sch.get("sensitive", {k: list(v) for k, v in CATEGORIES.items()})
    features = sch.get("features", list(dgp.feature_names))
    outcome = sch.get("outcome", default_outcome[0])
    kind = sch.get("outcome_kind", default_outcome[1])
    schema = None
    try:
        schema = Schema(sensitive, features, outcome, kind)
    except (TypeError, ValueError) as e:
        problems.append(f"[schema] {e}")
    if schema is not None:
        want = "duration" if family == "gamma" else "binary"
        if family in ("gamma", "bernoulli") and kind != want:
            problems.append(f"family {family!r} needs outcome_kind {want!r}, schema declares {kind!r}")

    mod = _get(raw, "model", {}) or {}
    spline_feature = mod.get("spline_feature", "age")
    if spline_feature in ("", "none"):
        spline_feature = None
    if schema is not None and spline_feature is not None and spline_feature not in schema.features:
        problems.append(f"[model] spline_feature {spline_feature!r} is not a schema feature")
    try:
        spline = SplineConfig(**(mod.get("spline", {}) or {}))
    except (TypeError, ValueError) as e:
        problems.append(f"[model.spline] {e}")
        spline = SplineConfig()
    threshold = mod.get("threshold", LTU_THRESHOLD)
    if not (isinstance(threshold, (int, float)) and threshold > 0):
        problems.append("[model] threshold must be positive")
        threshold = LTU_THRESHOLD

    fc = dict(_get(raw, "fit", {}) or {})
    if "lambda" in fc:
        fc["lam"] = fc.pop("lambda")
    if "lambda_s" in fc:
        fc["lam_s"] = fc.pop("lambda_s")
    if overrides.get("lam") is not None:
        fc["lam"] = overrides["lam"]
    fc["seed"] = seed
    try:
        fit_cfg = FitConfig(**fc)
    except (TypeError, ValueError) as e:
        problems.append(f"[fit] {e}")
        fit_cfg = FitConfig(seed=seed)

    tune = _get(raw, "tune", {}) or {}
    grid = tune.get("grid")
    if grid is not None and (not grid or any(v < 0 for v in grid)):
        problems.append("[tune] grid must be a non-empty list of lambda >= 0")
    vfrac = tune.get("validation_fraction", 0.2)
    if not 0 < vfrac < 1:
        problems.append("[tune] validation_fraction must lie in (0, 1)")

    dec = _get(raw, "decision", {}) or {}
    grid_text = overrides.get("delta_grid") or dec.get("delta_grid")
    deltas = default_delta_grid()
    if grid_text is not None:
        try:
            deltas = parse_delta_grid(grid_text) if isinstance(grid_text, str) else np.asarray(grid_text, float)
            if len(deltas) == 0 or np.any((deltas < 0) | (deltas > 0.5)):
                raise ValueError("delta grid values must lie in [0, 0.5]")
        except ValueError as e:
            problems.append(f"delta grid: {e}")
            deltas = default_delta_grid()
    policy = DecisionPolicy.symmetric(0.5)
    try:
        if overrides.get("delta") is not None:
            policy = DecisionPolicy.symmetric(overrides["delta"])
        elif "t_lo" in dec or "t_hi" in dec:
            policy = DecisionPolicy(dec.get("t_lo", 0.0), dec.get("t_hi", 1.0))
        elif "delta" in dec:
            policy = DecisionPolicy.symmetric(dec["delta"])
    except ValueError as e:
        problems.append(f"[decision] {e}")

    top_n = _get(raw, "audit.top_n", 5)
    if not isinstance(top_n, int) or top_n < 1:
        problems.append("[audit] top_n must be a positive integer")
        top_n = 5

    if problems:
        raise ConfigError(problems)
    spec_kwargs = {"spline_feature": spline_feature, "spline": spline, "threshold": threshold}
    return RunConfig(
        Path(path) if path else None, raw, schema, family, spec_kwargs, fit_cfg, grid, vfrac,
        deltas, policy, dgp, top_n, seed,
    )


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command, cfg, inputs, outputs, extra=None):
    doc = {
        "tool": "distfair",
        "tool_version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": str(cfg.path) if cfg.path else None,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _manifest_for(out):
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _inputs(cfg, *paths):
    return ([cfg.path] if cfg.path else []) + [p for p in paths if p]


def _load_data(cfg, path, split):
    if path is None:
        raise ConfigError(["--data is required"])
    return load_csv(path, cfg.schema, split=split)


def _spec(cfg):
    return ModelSpec.from_schema(cfg.schema, cfg.family, **cfg.spec_kwargs)


def cmd_generate(args, cfg):
    dgp = cfg.dgp if args.n is None else replace(cfg.dgp, n=args.n)
    data, truth = generate(dgp)
    out = Path(args.out)
    sidecar = write_generated(data, truth, out)
    write_manifest(_manifest_for(out), "generate", cfg, _inputs(cfg), [out, sidecar],
                   {"n": dgp.n, "prevalence": float(np.mean(data.outcome >= dgp.threshold))})


def cmd_fit(args, cfg):
    data = _load_data(cfg, args.data, "train")
    model = fit(_spec(cfg), data, cfg.fit)
    save(model, args.out)
    write_manifest(_manifest_for(args.out), "fit", cfg, _inputs(cfg, args.data), [args.out],
                   {"lam": cfg.fit.lam, "epochs": model.meta["epochs"], "objective": model.meta["objective"]})


def cmd_tune(args, cfg):
    data = _load_data(cfg, args.data, "train")
    if args.validation:
        train, valid = data, load_csv(args.validation, cfg.schema, split="validation")
    else:
        rng = np.random.default_rng(cfg.seed)
        perm = rng.permutation(len(data))
        n_val = max(1, int(round(cfg.validation_fraction * len(data))))
        train = data.take(np.sort(perm[n_val:]), "train")
        valid = data.take(np.sort(perm[:n_val]), "validation")
    grid = cfg.tune_grid if cfg.tune_grid is not None else default_grid()
    res = tune_lambda(_spec(cfg), train, valid, grid, cfg.fit, n_jobs=args.jobs)
    save(res.model, args.out)
    table = Path(args.out).with_name(Path(args.out).stem + ".tune.csv")
    with table.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "validation_mean_nll", "error", "selected"])
        for lam, score, err in res.rows():
            w.writerow([repr(lam), "NA" if not math.isfinite(score) else repr(score), err or "",
                        int(lam == res.selected)])
    write_manifest(_manifest_for(args.out), "tune", cfg, _inputs(cfg, args.data, args.validation),
                   [args.out, table], {"selected_lambda": res.selected})


def cmd_predict(args, cfg):
    model = load(args.model)
    data = _load_data(cfg, args.data, "test")
    pred = predict_dataset(model, data)
    labels = labels_for(data, model.spec.threshold)
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "group"] + list(model.spec.params) + ["prob", "label"])
        for i in range(len(data)):
            w.writerow([i, pred.cells[i]] + [repr(float(pred.params[p][i])) for p in model.spec.params]
                       + [repr(float(pred.prob[i])), int(labels[i])])
    write_manifest(_manifest_for(args.out), "predict", cfg, _inputs(cfg, args.model, args.data), [args.out])


def cmd_decide(args, cfg):
    model = load(args.model)
    data = _load_data(cfg, args.data, "test")
    pred, report = decide_dataset(model, data, cfg.policy)
    out = write_routing(data, pred, report, args.out)
    write_manifest(out / "manifest.json", "decide", cfg, _inputs(cfg, args.model, args.data),
                   [out / "decisions.csv", out / "rejected.csv", out / "routing_report.csv"],
                   {"t_lo": cfg.policy.t_lo, "t_hi": cfg.policy.t_hi})


def cmd_sweep(args, cfg):
    model = load(args.model)
    data = _load_data(cfg, args.data, "test")
    pred = predict_dataset(model, data)
    points = sweep(pred.prob, labels_for(data, model.spec.threshold), pred.cells, cfg.deltas,
                   group_order=model.spec.cells)
    write_curves(points, args.out, per_group=True)
    write_manifest(_manifest_for(args.out), "sweep", cfg, _inputs(cfg, args.model, args.data), [args.out])


def cmd_audit(args, cfg):
    model = load(args.model)
    data = _load_data(cfg, args.data, "test")
    inputs = _inputs(cfg, args.model, args.data)
    audit_report(model, data, args.out, cfg.deltas, cfg.top_n,
                 extra_manifest={"command": "audit", "inputs": {str(p): sha256_file(p) for p in inputs}})


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "tune": cmd_tune,
    "predict": cmd_predict,
    "decide": cmd_decide,
    "sweep": cmd_sweep,
    "audit": cmd_audit,
}


def build_parser():
    p = argparse.ArgumentParser(prog="distfair", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"distfair {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, model=False):
        sp.add_argument("--config", help="TOML run config")
        sp.add_argument("--out", required=True, help="output path")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--family", choices=["gamma", "bernoulli"])
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--delta-grid", help="'start:stop:step' or comma list")
        if data:
            sp.add_argument("--data", help="input CSV")
        if model:
            sp.add_argument("--model", required=True, help="model file from fit/tune")
        return sp

    g = common(sub.add_parser("generate", help="write a synthetic dataset"), data=False)
    g.add_argument("--n", type=int, help="number of rows")
    common(sub.add_parser("fit", help="fit a model"))
    t = common(sub.add_parser("tune", help="select lambda on a validation split"))
    t.add_argument("--validation", help="validation CSV (default: split off --data)")
    t.add_argument("--jobs", type=int, default=1)
    common(sub.add_parser("predict", help="per-row parameters and LTU probability"), model=True)
    d = common(sub.add_parser("decide", help="reject-option decisions and routing"), model=True)
    d.add_argument("--delta", type=float)
    common(sub.add_parser("sweep", help="coverage/accuracy curve over delta"), model=True)
    common(sub.add_parser("audit", help="group tables, importances and curves"), model=True)
    return p


def _fail(command, kind, message, detail=None, code=EXIT_RUNTIME):
    print(f"distfair-error command={command} kind={kind} message={json.dumps(message)}", file=sys.stderr)
    for line in detail or []:
        print(f"  {line}", file=sys.stderr)
    return code


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("DISTFAIR_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "family": args.family,
        "lam": args.lam,
        "delta_grid": args.delta_grid,
        "delta": getattr(args, "delta", None),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        return _fail(args.command, "config", str(e), e.problems, EXIT_CONFIG)
    except FileNotFoundError as e:
        return _fail(args.command, "io", str(e))
    except (ValueError, ArithmeticError, RuntimeError, OSError) as e:
        return _fail(args.command, type(e).__name__, str(e))
    return 0


if __name__ == "__main__":
    sys.exit(main())
