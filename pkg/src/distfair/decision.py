"""Reject-option decisions and coverage/accuracy sweeps over delta."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .datamodel import write_csv
from .model import predict_dataset

MISSING = "NA"


class Decision(IntEnum):
    NOT_LTU = 0
    LTU = 1
    REJECT = 2


@dataclass(frozen=True)
class DecisionPolicy:
    """Reject region ``[t_lo, t_hi]`` on the predicted probability.

    Rows with ``p < t_lo`` are classified 0, ``p > t_hi`` classified 1, and
    everything else (boundaries included) is rejected.  A degenerate region
    ``t_lo == t_hi`` rejects nothing: it is the standard threshold rule,
    ``p > t_hi`` gives 1 and everything else 0.
    """

    t_lo: float
    t_hi: float

    def __post_init__(self):
        if not (0.0 <= self.t_lo <= self.t_hi <= 1.0):
            raise ValueError(f"need 0 <= t_lo <= t_hi <= 1, got ({self.t_lo}, {self.t_hi})")

    @classmethod
    def symmetric(cls, delta):
        if not 0.0 <= delta <= 0.5:
            raise ValueError(f"delta must lie in [0, 0.5], got {delta}")
        return cls(delta, 1.0 - delta)


def decide(p, policy):
    """Vectorized three-way decision; returns int codes (see :class:`Decision`)."""
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if policy.t_lo == policy.t_hi:
        out = np.where(p > policy.t_hi, int(Decision.LTU), int(Decision.NOT_LTU))
        return out[()] if out.ndim == 0 else out
    out = np.full(p.shape, int(Decision.REJECT))
    out[p < policy.t_lo] = int(Decision.NOT_LTU)
    out[p > policy.t_hi] = int(Decision.LTU)
    return out[()] if out.ndim == 0 else out


def default_delta_grid():
    return np.round(np.linspace(0.0, 0.5, 101), 10)


@dataclass(frozen=True)
class CurvePoint:
    """Coverage and accuracy at one delta.

    ``accuracy`` values are None when nothing was classified in that group.
    """

    delta: float
    n: int
    n_classified: int
    accuracy: float | None
    groups: dict  # label -> (size, n_classified, accuracy or None)

    @property
    def prop_classified(self):
        return self.n_classified / self.n if self.n else 0.0

    def group_prop_classified(self, g):
        size, k, _ = self.groups[g]
        return k / size if size else 0.0

    def group_prop_rejected(self, g):
        size, k, _ = self.groups[g]
        return (size - k) / size if size else 0.0


def _acc(correct, mask):
    k = int(mask.sum())
    return k, (float(correct[mask].mean()) if k else None)


def sweep(prob, labels, groups, deltas=None, group_order=None):
    """Apply the symmetric policy for each delta and summarise per group."""
    prob = np.asarray(prob, dtype=float)
    labels = np.asarray(labels, dtype=int)
    groups = np.asarray(groups, dtype=object)
    if not (len(prob) == len(labels) == len(groups)):
        raise ValueError("prob, labels and groups must have equal length")
    deltas = default_delta_grid() if deltas is None else np.asarray(deltas, dtype=float)
    if np.any((deltas < 0) | (deltas > 0.5)):
        raise ValueError("delta grid must lie within [0, 0.5]")
    order = list(group_order) if group_order is not None else sorted(set(groups.tolist()))
    masks = {g: groups == g for g in order}
    points = []
    for d in deltas:
        dec = decide(prob, DecisionPolicy.symmetric(float(d)))
        classified = dec != Decision.REJECT
        correct = dec == labels
        k, acc = _acc(correct, classified)
        per = {}
        for g in order:
            gm = masks[g]
            kg, accg = _acc(correct, classified & gm)
            per[g] = (int(gm.sum()), kg, accg)
        points.append(CurvePoint(float(d), len(prob), k, acc, per))
    return points


def baseline_accuracy(prob, labels):
    """Accuracy of plain thresholding at 0.5 (``p > 0.5`` predicts 1) with every row classified."""
    pred = (np.asarray(prob, dtype=float) > 0.5).astype(int)
    return float(np.mean(pred == np.asarray(labels, dtype=int)))


def _fmt(v):
    return MISSING if v is None else repr(float(v))


def write_curves(points, path, per_group=True):
    """Write curve rows ``delta, group, prop_classified, accuracy, prop_rejected``.

    One ``overall`` row per delta, followed by one row per group when
    ``per_group`` is true.  Undefined accuracies are written as ``NA``.
    """
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "group", "prop_classified", "accuracy", "prop_rejected"])
        for pt in points:
            pc = pt.prop_classified
            w.writerow([_fmt(pt.delta), "overall", _fmt(pc), _fmt(pt.accuracy), _fmt(1.0 - pc)])
            if per_group:
                for g, (_, _, acc) in pt.groups.items():
                    w.writerow(
                        [_fmt(pt.delta), g, _fmt(pt.group_prop_classified(g)), _fmt(acc),
                         _fmt(pt.group_prop_rejected(g))]
                    )


def write_reject_by_group(points, path):
    """Reject proportion per group against overall coverage, one row per (delta, group)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "prop_classified_overall", "group", "n_group", "n_rejected", "prop_rejected"])
        for pt in points:
            for g, (size, k, _) in pt.groups.items():
                w.writerow([_fmt(pt.delta), _fmt(pt.prop_classified), g, size, size - k,
                            _fmt(pt.group_prop_rejected(g))])


def read_curves(path):
    """Parse a curve CSV back into dictionaries, mapping ``NA`` to None."""
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({
                k: (v if k == "group" else (None if v == MISSING else float(v))) for k, v in rec.items()
            })
    return rows


@dataclass(frozen=True)
class RoutingReport:
    decisions: np.ndarray
    counts: dict  # group -> {decision code: count}

    @property
    def rejected(self):
        return np.flatnonzero(self.decisions == Decision.REJECT)


def decide_dataset(model, data, policy):
    """Decide every row of ``data`` and count decisions per group cell."""
    pred = predict_dataset(model, data)
    dec = decide(pred.prob, policy)
    counts = {}
    for g in model.spec.cells:
        m = pred.cells == g
        counts[g] = {int(c): int(np.sum(dec[m] == c)) for c in Decision}
    return pred, RoutingReport(dec, counts)


def write_routing(data, pred, report, out_dir):
    """Write ``decisions.csv``, ``rejected.csv`` (rows for human review) and ``routing_report.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    row_id = np.arange(len(data))
    with (out / "decisions.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "group", "prob", "decision"])
        for i in range(len(data)):
            w.writerow([i, pred.cells[i], repr(float(pred.prob[i])), int(report.decisions[i])])
    rej = report.rejected
    write_csv(data.take(rej), out / "rejected.csv", extra={"row_id": row_id[rej], "prob": pred.prob[rej]})
    with (out / "routing_report.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "n", "not_ltu", "ltu", "reject"])
        for g, c in report.counts.items():
            w.writerow([g, sum(c.values()), c[0], c[1], c[2]])
    return out


def coverage_gap(points, groups, coverage):
    """Max-min spread of group accuracies at the delta whose coverage is closest to ``coverage``.

    Groups with undefined accuracy are skipped; returns ``(delta, gap)``.
    """
    best = min(points, key=lambda p: (abs(p.prop_classified - coverage), -p.delta))
    accs = [best.groups[g][2] for g in groups if best.groups[g][2] is not None]
    return best.delta, (max(accs) - min(accs) if accs else math.nan)
