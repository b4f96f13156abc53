"""Additive distributional predictors, prediction and model files.

Each distribution parameter ``theta_k`` gets its own linear predictor

    eta_k = A @ beta0_k + B(age) @ gamma_k + X_other @ beta1_k

and ``theta_k = h_k(eta_k)``.  All parameters share the same block
structure; coefficients are independent per parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .basis import SplineConfig, bspline_block, cell_index, cell_label, group_cells, linear_block, one_hot
from .datamodel import StandardizationStats, standardize
from .families import BernoulliParams, GammaParams, get_family, ltu_probability, LTU_THRESHOLD

FORMAT_VERSION = "distfair-model/1"
BLOCKS = ("group", "spline", "linear")


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Structure shared by every distribution parameter of the model.

    ``spline_feature`` names the feature modelled by the P-spline (None to
    drop the smooth term); ``linear_features`` enter with an L1 penalty.
    """

    family: str
    categories: dict
    linear_features: tuple
    spline_feature: str | None = None
    spline: SplineConfig = SplineConfig()
    threshold: float = LTU_THRESHOLD

    def __post_init__(self):
        get_family(self.family)
        object.__setattr__(self, "family", self.family.lower())
        object.__setattr__(self, "categories", {k: tuple(v) for k, v in self.categories.items()})
        object.__setattr__(self, "linear_features", tuple(self.linear_features))
        if self.spline_feature is not None and self.spline_feature in self.linear_features:
            raise ValueError(f"{self.spline_feature!r} cannot be both spline and linear feature")

    @classmethod
    def from_schema(cls, schema, family, spline_feature="age", spline=SplineConfig(), threshold=LTU_THRESHOLD):
        if spline_feature is not None and spline_feature not in schema.features:
            raise ValueError(f"spline feature {spline_feature!r} not among schema features")
        linear = [f for f in schema.features if f != spline_feature]
        return cls(family, schema.sensitive, linear, spline_feature, spline, threshold)

    @property
    def params(self):
        return get_family(self.family).params

    @property
    def cells(self):
        return [cell_label(c) for c in group_cells(self.categories)]

    def widths(self):
        return {
            "group": len(self.cells),
            "spline": self.spline.n_basis if self.spline_feature else 0,
            "linear": len(self.linear_features),
        }

    def check_schema(self, schema, outcome=True):
        if schema.sensitive != self.categories:
            raise ValueError("dataset sensitive columns do not match the model")
        needed = list(self.linear_features) + ([self.spline_feature] if self.spline_feature else [])
        missing = [f for f in needed if f not in schema.features]
        if missing:
            raise ValueError(f"dataset lacks model features {missing}")
        kind = "duration" if self.family == "gamma" else "binary"
        if outcome and schema.outcome_kind != kind:
            raise ValueError(f"{self.family} family needs a {kind} outcome, got {schema.outcome_kind}")

    def to_dict(self):
        return {
            "family": self.family,
            "categories": {k: list(v) for k, v in self.categories.items()},
            "linear_features": list(self.linear_features),
            "spline_feature": self.spline_feature,
            "spline": {
                "degree": self.spline.degree,
                "n_knots": self.spline.n_knots,
                "penalty_order": self.spline.penalty_order,
                "smoothing": self.spline.smoothing,
            },
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["family"],
            d["categories"],
            d["linear_features"],
            d["spline_feature"],
            SplineConfig(**d["spline"]),
            d["threshold"],
        )


@dataclass(frozen=True)
class Design:
    """Stacked design matrix ``[group | spline | linear]`` with column slices."""

    matrix: np.ndarray = field(repr=False)
    slices: dict
    spline_penalty: np.ndarray | None = field(repr=False)
    spline_center: np.ndarray | None = field(repr=False)


def _feature_columns(spec, sensitive, features, feature_names):
    names = list(feature_names)
    spline_x = features[:, names.index(spec.spline_feature)] if spec.spline_feature else None
    lin_idx = [names.index(f) for f in spec.linear_features]
    return spline_x, features[:, lin_idx]


def build_design(spec, sensitive, features, feature_names, spline_center=None):
    """Assemble the design for standardized ``features``.

    The spline basis is column-centred so the smooth term carries no
    constant; without ``spline_center`` the centre is taken from these rows
    (the training data) and returned for reuse at prediction time.
    """
    blocks = [one_hot(sensitive, spec.categories)]
    spline_x, lin_x = _feature_columns(spec, sensitive, features, feature_names)
    penalty = None
    if spec.spline_feature:
        sb = bspline_block(spline_x, spec.spline, spec.spline_feature)
        if spline_center is None:
            spline_center = sb.matrix.mean(axis=0)
        blocks.append(type(sb)(sb.matrix - spline_center, "quadratic", sb.names, sb.penalty_matrix))
        penalty = sb.penalty_matrix
    blocks.append(linear_block(lin_x, spec.linear_features))
    slices = {}
    start = 0
    for name, w in spec.widths().items():
        slices[name] = slice(start, start + w)
        start += w
    mat = np.hstack([b.matrix for b in blocks]) if blocks else np.zeros((len(features), 0))
    return Design(mat, slices, penalty, spline_center)


@dataclass(frozen=True)
class FittedModel:
    """Coefficients per distribution parameter plus everything needed to predict.

    ``coef[param][block]`` holds ``group`` (beta0), ``spline`` (gamma) and
    ``linear`` (beta1) vectors.  ``meta`` records the fit settings, the
    number of epochs run and the per-epoch objective trace.
    """

    spec: ModelSpec
    stats: StandardizationStats
    coef: dict
    spline_center: np.ndarray | None
    meta: dict

    def __post_init__(self):
        widths = self.spec.widths()
        for p in self.spec.params:
            for b in BLOCKS:
                v = np.asarray(self.coef[p][b], dtype=float)
                if v.shape != (widths[b],):
                    raise ValueError(f"coefficient {p}.{b} has shape {v.shape}, expected ({widths[b]},)")

    @property
    def family(self):
        return get_family(self.spec.family)

    def coef_matrix(self):
        """Coefficients stacked as ``(n_columns, n_params)`` in design order."""
        return np.column_stack(
            [np.concatenate([self.coef[p][b] for b in BLOCKS]) for p in self.spec.params]
        )

    def design(self, std_data):
        return build_design(
            self.spec, std_data.sensitive, std_data.features, std_data.schema.features, self.spline_center
        )

    def block_contributions(self, std_data):
        """Per-parameter, per-block additive contributions to ``eta``."""
        d = self.design(std_data)
        out = {}
        for p in self.spec.params:
            out[p] = {b: d.matrix[:, d.slices[b]] @ self.coef[p][b] for b in BLOCKS}
        return out

    def linear_predictor(self, std_data):
        d = self.design(std_data)
        return d.matrix @ self.coef_matrix()


def coef_from_matrix(spec, w):
    widths = spec.widths()
    coef = {}
    for j, p in enumerate(spec.params):
        coef[p] = {}
        start = 0
        for b in BLOCKS:
            coef[p][b] = np.array(w[start : start + widths[b], j], dtype=float)
            start += widths[b]
    return coef


def zero_model(spec, stats, spline_center=None):
    widths = spec.widths()
    coef = {p: {b: np.zeros(widths[b]) for b in BLOCKS} for p in spec.params}
    if spline_center is None and spec.spline_feature:
        spline_center = np.zeros(widths["spline"])
    return FittedModel(spec, stats, coef, spline_center, {})


def _row_to_arrays(spec, stats, row):
    missing = [c for c in list(spec.categories) + list(stats.names) if c not in row]
    if missing:
        raise ValueError(f"row lacks columns {missing}")
    sensitive = {c: np.array([row[c]], dtype=object) for c in spec.categories}
    features = np.array([[float(row[f]) for f in stats.names]])
    return sensitive, features


def predict_params(model, row):
    """Distribution parameters for one standardized record (a column -> value mapping)."""
    sensitive, features = _row_to_arrays(model.spec, model.stats, row)
    d = build_design(model.spec, sensitive, features, model.stats.names, model.spline_center)
    eta = (d.matrix @ model.coef_matrix())[0]
    theta = model.family.inverse_links(eta)
    if model.spec.family == "gamma":
        return GammaParams(float(theta[0]), float(theta[1]))
    return BernoulliParams(float(theta[0]))


@dataclass(frozen=True)
class Predictions:
    """Per-row predictions; ``prob`` is P(Y_LTU = 1) for either family."""

    cells: np.ndarray
    params: dict
    prob: np.ndarray


def predict_dataset(model, data):
    """Predict every row of the raw (unstandardized) ``data``, order preserved."""
    model.spec.check_schema(data.schema, outcome=False)
    std, _ = standardize(data, model.stats)
    eta = model.linear_predictor(std)
    theta = model.family.inverse_links(eta)
    params = {p: theta[:, j] for j, p in enumerate(model.spec.params)}
    if model.spec.family == "gamma":
        prob = ltu_probability(params["mu"], params["sigma2"], model.spec.threshold)
    else:
        prob = params["p"]
    cells = np.array(model.spec.cells, dtype=object)[cell_index(data.sensitive, model.spec.categories)]
    return Predictions(cells, params, np.asarray(prob, dtype=float))


def labels_for(data, threshold=LTU_THRESHOLD):
    """Binary LTU labels: the outcome itself, or ``duration >= threshold``."""
    if data.schema.outcome_kind == "binary":
        return data.outcome.astype(int)
    return (data.outcome >= threshold).astype(int)


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=float)]


def to_document(model):
    return {
        "format": FORMAT_VERSION,
        "tool_version": __version__,
        "spec": model.spec.to_dict(),
        "stats": model.stats.to_dict(),
        "spline_center": None if model.spline_center is None else _floats(model.spline_center),
        "coefficients": {
            p: {b: _floats(model.coef[p][b]) for b in BLOCKS} for p in model.spec.params
        },
        "meta": model.meta,
    }


def save(model, path):
    """Write a versioned JSON model file.

    Floats use Python's shortest round-trip representation, so loading
    restores every coefficient bit for bit.
    """
    text = json.dumps(to_document(model), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def load(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ModelFileError(f"cannot read model file {path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_VERSION:
        got = doc.get("format") if isinstance(doc, dict) else None
        raise ModelFileError(f"unsupported model file version {got!r}; expected {FORMAT_VERSION!r}")
    try:
        spec = ModelSpec.from_dict(doc["spec"])
        stats = StandardizationStats.from_dict(doc["stats"])
        coef = {
            p: {b: np.array(doc["coefficients"][p][b], dtype=float) for b in BLOCKS} for p in spec.params
        }
        center = doc["spline_center"]
        center = None if center is None else np.array(center, dtype=float)
        return FittedModel(spec, stats, coef, center, doc["meta"])
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"corrupt model file {path}: {e}") from e
