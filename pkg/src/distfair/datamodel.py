"""Datasets, CSV ingestion and min-max standardization."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

OUTCOME_KINDS = ("duration", "binary")


class IngestionError(ValueError):
    """Raised when a CSV file does not match its declared schema."""


@dataclass(frozen=True)
class Schema:
    """Column roles of a dataset.

    ``sensitive`` maps each sensitive column to its declared, ordered
    category set.  Column order in the mapping fixes the group-cell order.
    """

    sensitive: dict
    features: tuple
    outcome: str
    outcome_kind: str

    def __post_init__(self):
        object.__setattr__(self, "sensitive", {k: tuple(v) for k, v in self.sensitive.items()})
        object.__setattr__(self, "features", tuple(self.features))
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ValueError(f"outcome_kind must be one of {OUTCOME_KINDS}, got {self.outcome_kind!r}")
        if not self.sensitive:
            raise ValueError("schema needs at least one sensitive column")
        for name, cats in self.sensitive.items():
            if len(cats) == 0 or len(set(cats)) != len(cats):
                raise ValueError(f"sensitive column {name!r} needs distinct, non-empty categories")
        names = list(self.sensitive) + list(self.features) + [self.outcome]
        if len(set(names)) != len(names):
            raise ValueError("schema columns must be unique across roles")

    @property
    def columns(self):
        return list(self.sensitive) + list(self.features) + [self.outcome]

    def to_dict(self):
        return {
            "sensitive": {k: list(v) for k, v in self.sensitive.items()},
            "features": list(self.features),
            "outcome": self.outcome,
            "outcome_kind": self.outcome_kind,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["sensitive"], d["features"], d["outcome"], d["outcome_kind"])


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Column-oriented table: sensitive attributes, numeric features, outcome."""

    schema: Schema
    sensitive: dict
    features: np.ndarray
    outcome: np.ndarray
    split: str = "train"

    def __post_init__(self):
        sens = {k: _frozen(np.asarray(v, dtype=object)) for k, v in self.sensitive.items()}
        feats = _frozen(np.asarray(self.features, dtype=float).reshape(len(self.outcome), len(self.schema.features)))
        out = _frozen(np.asarray(self.outcome, dtype=float))
        object.__setattr__(self, "sensitive", sens)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "outcome", out)
        if set(sens) != set(self.schema.sensitive):
            raise ValueError("sensitive columns do not match schema")
        if feats.shape[1] != len(self.schema.features):
            raise ValueError("feature matrix width does not match schema")
        for name, col in sens.items():
            if len(col) != len(out):
                raise ValueError(f"column {name!r} has wrong length")
            bad = set(col.tolist()) - set(self.schema.sensitive[name])
            if bad:
                raise ValueError(f"unknown categories in {name!r}: {sorted(bad)}")
        if not np.all(np.isfinite(feats)) or not np.all(np.isfinite(out)):
            raise ValueError("dataset contains non-finite values")
        if self.schema.outcome_kind == "duration" and np.any(out <= 0):
            raise ValueError("duration outcomes must be strictly positive")
        if self.schema.outcome_kind == "binary" and np.any((out != 0) & (out != 1)):
            raise ValueError("binary outcomes must be 0 or 1")
        if self.split not in ("train", "test", "validation"):
            raise ValueError(f"unknown split tag {self.split!r}")

    def __len__(self):
        return len(self.outcome)

    def feature(self, name):
        return self.features[:, self.schema.features.index(name)]

    def take(self, idx, split=None):
        idx = np.asarray(idx)
        return Dataset(
            self.schema,
            {k: v[idx] for k, v in self.sensitive.items()},
            self.features[idx],
            self.outcome[idx],
            split or self.split,
        )

    def with_split(self, split):
        return replace(self, split=split)


def load_csv(path, schema, split="train"):
    """Read a CSV with a header row into a :class:`Dataset`.

    Undeclared columns are ignored.  Any missing cell, unparseable number,
    or undeclared category raises :class:`IngestionError` naming the data
    row (1-based, header excluded) and the column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise IngestionError(f"{path}: missing column(s) {missing}")
        sens = {k: [] for k in schema.sensitive}
        feats = []
        outcome = []
        for i, rec in enumerate(reader, start=1):
            for c in schema.columns:
                v = rec.get(c)
                if v is None or v.strip() == "":
                    raise IngestionError(f"{path}: missing value in row {i}, column {c!r}")
            for name, cats in schema.sensitive.items():
                v = rec[name].strip()
                if v not in cats:
                    raise IngestionError(f"{path}: unknown category {v!r} in row {i}, column {name!r}")
                sens[name].append(v)
            row = []
            for c in schema.features:
                row.append(_parse_float(rec[c], path, i, c))
            feats.append(row)
            y = _parse_float(rec[schema.outcome], path, i, schema.outcome)
            if schema.outcome_kind == "duration" and not y > 0:
                raise IngestionError(f"{path}: non-positive duration in row {i}, column {schema.outcome!r}")
            if schema.outcome_kind == "binary" and y not in (0.0, 1.0):
                raise IngestionError(f"{path}: non-binary outcome in row {i}, column {schema.outcome!r}")
            outcome.append(y)
    n = len(outcome)
    return Dataset(schema, sens, np.asarray(feats, dtype=float).reshape(n, len(schema.features)), outcome, split)


def _parse_float(text, path, row, col):
    try:
        v = float(text)
    except ValueError:
        raise IngestionError(f"{path}: unparseable number {text!r} in row {row}, column {col!r}") from None
    if not np.isfinite(v):
        raise IngestionError(f"{path}: non-finite number {text!r} in row {row}, column {col!r}")
    return v


def _fmt(v):
    return repr(float(v))


def write_csv(data, path, extra=None):
    """Write ``data`` as CSV; floats use the shortest exact representation.

    ``extra`` optionally maps additional column names to per-row values
    appended after the declared columns.
    """
    schema = data.schema
    extra = extra or {}
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.columns + list(extra))
        binary = schema.outcome_kind == "binary"
        for i in range(len(data)):
            row = [data.sensitive[k][i] for k in schema.sensitive]
            row += [_fmt(v) for v in data.features[i]]
            row.append(str(int(data.outcome[i])) if binary else _fmt(data.outcome[i]))
            row += [_cell(extra[k][i]) for k in extra]
            w.writerow(row)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


@dataclass(frozen=True)
class StandardizationStats:
    """Per-feature minimum and maximum from the training split."""

    names: tuple
    minimum: np.ndarray = field(repr=False)
    maximum: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "minimum", _frozen(np.asarray(self.minimum, dtype=float)))
        object.__setattr__(self, "maximum", _frozen(np.asarray(self.maximum, dtype=float)))
        if np.any(self.maximum < self.minimum):
            raise ValueError("standardization stats need max >= min")

    @classmethod
    def fit(cls, data):
        if len(data) == 0:
            raise ValueError("cannot compute standardization stats on an empty dataset")
        return cls(data.schema.features, data.features.min(axis=0), data.features.max(axis=0))

    def apply(self, x):
        """Map raw feature values to ``(x - min) / (max - min)``; constant columns become 0."""
        x = np.asarray(x, dtype=float)
        span = self.maximum - self.minimum
        const = span == 0
        out = (x - self.minimum) / np.where(const, 1.0, span)
        return np.where(const, 0.0, out)

    def to_dict(self):
        return {
            "names": list(self.names),
            "min": [float(v) for v in self.minimum],
            "max": [float(v) for v in self.maximum],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["names"], d["min"], d["max"])


def standardize(data, stats=None):
    """Min-max scale the features of ``data``.

    Without ``stats`` the statistics are computed from ``data`` (which must
    be the training split).  Given ``stats`` they are applied as-is, so test
    values outside the training range land outside [0, 1].
    """
    if stats is None:
        if data.split != "train":
            raise ValueError("standardization stats must be computed on the training split")
        stats = StandardizationStats.fit(data)
        for name, lo, hi in zip(stats.names, stats.minimum, stats.maximum):
            if lo == hi:
                logger.warning("feature %r is constant in training data; mapped to 0", name)
    elif tuple(stats.names) != data.schema.features:
        raise ValueError("standardization stats do not match dataset features")
    return replace(data, features=stats.apply(data.features)), stats
