"""Group coefficient tables, feature importance and bundled audit reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .decision import default_delta_grid, sweep, write_curves, write_reject_by_group
from .model import labels_for, predict_dataset, to_document

VARIANCE_FACTOR_NOTE = (
    "variance_factor is sigma2 / mu**2, the squared coefficient of variation "
    "(the reciprocal of the Gamma shape)."
)


@dataclass(frozen=True)
class GroupRow:
    cell: str
    mu: float
    sigma2: float

    @property
    def variance_factor(self):
        return self.sigma2 / (self.mu * self.mu)


def group_table(model):
    """Expectation, variance and variance factor per group cell, other features at 0."""
    if model.spec.family != "gamma":
        raise ValueError("group_table needs a Gamma model; a Bernoulli model has no variance parameter")
    mu = np.exp(model.coef["mu"]["group"])
    s2 = np.exp(model.coef["sigma2"]["group"])
    return [GroupRow(c, float(m), float(v)) for c, m, v in zip(model.spec.cells, mu, s2)]


@dataclass(frozen=True)
class ImportanceTable:
    param: str
    names: tuple
    coefs: tuple
    truncated: bool  # True when fewer rows exist than were requested

    @property
    def factors(self):
        return tuple(math.exp(b) for b in self.coefs)


def importance(model, param, top_n=5):
    """Linear-block features ranked by ``|beta|``; ties keep column order."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if param not in model.spec.params:
        raise ValueError(f"model has no parameter {param!r}")
    beta = np.asarray(model.coef[param]["linear"], dtype=float)
    order = sorted(range(len(beta)), key=lambda j: (-abs(beta[j]), j))
    keep = order[:top_n]
    names = model.spec.linear_features
    return ImportanceTable(param, tuple(names[j] for j in keep), tuple(float(beta[j]) for j in keep),
                           top_n > len(beta))


def _r(v):
    return repr(float(v))


def write_group_table(rows, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "mu", "sigma2", "variance_factor"])
        for r in rows:
            w.writerow([r.cell, _r(r.mu), _r(r.sigma2), _r(r.variance_factor)])


def write_importance(table, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "feature", "coef", "factor"])
        for i, (n, b, f) in enumerate(zip(table.names, table.coefs, table.factors), start=1):
            w.writerow([i, n, _r(b), _r(f)])


def data_digest(data):
    """SHA-256 over the dataset's columns, independent of how it was loaded."""
    h = hashlib.sha256()
    h.update(json.dumps(data.schema.to_dict(), sort_keys=True).encode())
    for k in data.schema.sensitive:
        h.update("\x1f".join(data.sensitive[k].tolist()).encode())
    h.update(np.ascontiguousarray(data.features).tobytes())
    h.update(np.ascontiguousarray(data.outcome).tobytes())
    return h.hexdigest()


def model_digest(model):
    return hashlib.sha256(json.dumps(to_document(model), sort_keys=True).encode()).hexdigest()


def audit_report(model, test, out_dir, deltas=None, top_n=5, extra_manifest=None):
    """Write the full audit bundle for ``model`` evaluated on raw ``test`` data.

    Files: group_table.csv (Gamma only), importance_<param>.csv,
    curves_overall.csv, curves_groups.csv, reject_by_group.csv and
    manifest.json.  Output depends only on the inputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    deltas = default_delta_grid() if deltas is None else np.asarray(deltas, dtype=float)
    files = []
    if model.spec.family == "gamma":
        write_group_table(group_table(model), out / "group_table.csv")
        files.append("group_table.csv")
    for p in model.spec.params:
        name = f"importance_{p}.csv"
        write_importance(importance(model, p, top_n), out / name)
        files.append(name)
    pred = predict_dataset(model, test)
    labels = labels_for(test, model.spec.threshold)
    points = sweep(pred.prob, labels, pred.cells, deltas, group_order=model.spec.cells)
    write_curves(points, out / "curves_overall.csv", per_group=False)
    write_curves(points, out / "curves_groups.csv", per_group=True)
    write_reject_by_group(points, out / "reject_by_group.csv")
    files += ["curves_overall.csv", "curves_groups.csv", "reject_by_group.csv"]
    manifest = {
        "tool": "distfair",
        "tool_version": __version__,
        "model_sha256": model_digest(model),
        "data_sha256": data_digest(test),
        "n_test": len(test),
        "family": model.spec.family,
        "lam": model.meta.get("lam"),
        "seed": model.meta.get("seed"),
        "deltas": [float(d) for d in deltas],
        "files": files,
        "notes": [VARIANCE_FACTOR_NOTE] if model.spec.family == "gamma" else [],
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
