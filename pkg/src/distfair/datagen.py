"""Synthetic unemployment-duration data with a known Gamma ground truth.

Durations are drawn from a Gamma with mean ``mu`` and variance ``sigma2``
where

    log mu     = log c   + b0_mu[cell]     + age_effect(age) + X @ b1_mu
    log sigma2 = 2 log c + b0_sigma2[cell]                   + X @ b1_sigma2

and ``c`` is a time scale (months per model unit).  Scaling the mean by
``c`` and the variance by ``c**2`` keeps the shape, so the per-cell
variance factor sigma2 / mu**2 is that of the unscaled group values.  The
default group values echo a published audit table; they are flavour, not a
description of any real labour market.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .basis import cell_index, cell_label, group_cells
from .datamodel import Dataset, Schema, write_csv
from .families import LTU_THRESHOLD, ltu_probability

CATEGORIES = {"gender": ("male", "female"), "citizenship": ("German", "NonGerman")}

TABLE_MU = (0.87, 1.11, 1.42, 1.50)
TABLE_SIGMA2 = (0.76, 1.24, 2.74, 2.99)

DEFAULT_BETA_MU = (0.6, -0.5, 0.45, -0.4, 0.35, -0.3, 0.25, -0.2, 0.15, -0.1)
DEFAULT_BETA_SIGMA2 = (0.4, -0.3, 0.0, 0.25, 0.0, -0.2, 0.0, 0.15, 0.0, 0.1)

# Calibrated with calibrate_time_scale() on a 400 000-row pilot so that the
# default config has 14.6% of durations at or above 12 months.
DEFAULT_TIME_SCALE = 3.9599518145958053


class ForeignRowError(ValueError):
    pass


@dataclass(frozen=True)
class DGPConfig:
    n: int = 10_000
    cell_probs: tuple = (0.25, 0.25, 0.25, 0.25)
    group_mu: tuple = tuple(math.log(v) for v in TABLE_MU)
    group_sigma2: tuple = tuple(math.log(v) for v in TABLE_SIGMA2)
    age_amplitude: float = 0.25
    beta_mu: tuple = DEFAULT_BETA_MU
    beta_sigma2: tuple = DEFAULT_BETA_SIGMA2
    n_noise: int = 20
    time_scale: float = DEFAULT_TIME_SCALE
    threshold: float = LTU_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        for name in ("cell_probs", "group_mu", "group_sigma2", "beta_mu", "beta_sigma2"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        ncell = len(group_cells(CATEGORIES))
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if len(self.cell_probs) != ncell or len(self.group_mu) != ncell or len(self.group_sigma2) != ncell:
            raise ValueError(f"group settings need {ncell} entries")
        if any(p < 0 for p in self.cell_probs) or abs(sum(self.cell_probs) - 1.0) > 1e-9:
            raise ValueError("cell probabilities must be non-negative and sum to 1")
        if len(self.beta_mu) != len(self.beta_sigma2):
            raise ValueError("beta_mu and beta_sigma2 must have the same length")
        if self.n_noise < 0 or self.time_scale <= 0 or self.threshold <= 0:
            raise ValueError("n_noise >= 0, time_scale > 0 and threshold > 0 required")

    @property
    def n_informative(self):
        return len(self.beta_mu)

    @property
    def feature_names(self):
        k = self.n_informative + self.n_noise
        return ("age",) + tuple(f"f{j:02d}" for j in range(1, k + 1))

    def schema(self, outcome="duration"):
        if outcome == "duration":
            return Schema(CATEGORIES, self.feature_names, "duration", "duration")
        return Schema(CATEGORIES, self.feature_names, "ltu", "binary")


def age_effect(age, amplitude):
    """Zero-mean smooth effect on [0, 1]: ``amplitude * sin(2 pi age)``."""
    return amplitude * np.sin(2.0 * np.pi * np.asarray(age, dtype=float))


@dataclass(frozen=True)
class Truth:
    """Generating coefficients on the link scale (in months) and per-row truth."""

    cfg: DGPConfig
    cells: tuple
    group_mu: np.ndarray = field(repr=False)
    group_sigma2: np.ndarray = field(repr=False)
    beta_mu: np.ndarray = field(repr=False)
    beta_sigma2: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    sigma2: np.ndarray = field(repr=False)
    prob: np.ndarray = field(repr=False)

    def params(self, sensitive, features):
        """True (mu, sigma2) for raw covariates; ``features`` columns follow ``cfg.feature_names``."""
        features = np.asarray(features, dtype=float)
        cell = cell_index(sensitive, CATEGORIES)
        age = features[:, 0]
        x = features[:, 1:]
        eta_mu = self.group_mu[cell] + age_effect(age, self.cfg.age_amplitude) + x @ self.beta_mu
        eta_s = self.group_sigma2[cell] + x @ self.beta_sigma2
        return np.exp(eta_mu), np.exp(eta_s)

    def to_dict(self):
        return {
            "config": asdict(self.cfg),
            "cells": list(self.cells),
            "group_mu": [float(v) for v in self.group_mu],
            "group_sigma2": [float(v) for v in self.group_sigma2],
            "beta_mu": [float(v) for v in self.beta_mu],
            "beta_sigma2": [float(v) for v in self.beta_sigma2],
            "mu": [float(v) for v in self.mu],
            "sigma2": [float(v) for v in self.sigma2],
            "prob": [float(v) for v in self.prob],
        }


def true_ltu_prob(truth, row):
    """Oracle P(T >= threshold) for one generated row (a column -> value mapping).

    With a ``row_id`` key the covariates are checked against the stored
    truth for that row.
    """
    names = truth.cfg.feature_names
    missing = [c for c in list(CATEGORIES) + list(names) if c not in row]
    if missing:
        raise ForeignRowError(f"row lacks generator columns {missing}")
    for c, cats in CATEGORIES.items():
        if row[c] not in cats:
            raise ForeignRowError(f"category {row[c]!r} in {c!r} is not produced by this generator")
    sens = {c: np.array([row[c]], dtype=object) for c in CATEGORIES}
    feats = np.array([[float(row[f]) for f in names]])
    mu, s2 = truth.params(sens, feats)
    if "row_id" in row:
        i = int(row["row_id"])
        if not 0 <= i < len(truth.mu) or mu[0] != truth.mu[i] or s2[0] != truth.sigma2[i]:
            raise ForeignRowError(f"row {i} does not belong to this generated dataset")
    return float(ltu_probability(mu, s2, truth.cfg.threshold)[0])


def sample_gamma(rng, shape, rate):
    """Vectorized Marsaglia-Tsang squeeze/rejection sampler.

    Shapes below 1 are boosted: draw with ``shape + 1`` and multiply by
    ``U ** (1 / shape)``.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.broadcast_to(np.asarray(rate, dtype=float), shape.shape)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ValueError("gamma sampler needs positive shape and rate")
    small = shape < 1.0
    a = np.where(small, shape + 1.0, shape)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(shape.shape)
    pending = np.arange(shape.size)
    flat_d, flat_c = d.ravel(), c.ravel()
    while pending.size:
        dd, cc = flat_d[pending], flat_c[pending]
        x = rng.standard_normal(pending.size)
        u = rng.random(pending.size)
        v = (1.0 + cc * x) ** 3
        ok = v > 0
        vs = np.where(ok, v, 1.0)
        x2 = x * x
        accept = ok & ((u < 1.0 - 0.0331 * x2 * x2) | (np.log(u) < 0.5 * x2 + dd * (1.0 - vs + np.log(vs))))
        out.flat[pending[accept]] = (dd * vs)[accept]
        pending = pending[~accept]
    if np.any(small):
        u = 1.0 - rng.random(int(small.sum()))
        out[small] *= u ** (1.0 / shape[small])
    return out / rate


def _truth_coefs(cfg):
    logc = math.log(cfg.time_scale)
    zeros = np.zeros(cfg.n_noise)
    return (
        np.asarray(cfg.group_mu) + logc,
        np.asarray(cfg.group_sigma2) + 2.0 * logc,
        np.concatenate([cfg.beta_mu, zeros]),
        np.concatenate([cfg.beta_sigma2, zeros]),
    )


def _bare_truth(cfg):
    cells = tuple(cell_label(c) for c in group_cells(CATEGORIES))
    return Truth(cfg, cells, *_truth_coefs(cfg), None, None, None)


def _covariates(cfg, rng):
    cells = group_cells(CATEGORIES)
    cell = rng.choice(len(cells), size=cfg.n, p=np.asarray(cfg.cell_probs))
    sens = {c: np.array([cells[i][j] for i in cell], dtype=object) for j, c in enumerate(CATEGORIES)}
    feats = rng.random((cfg.n, len(cfg.feature_names)))
    return sens, feats


def generate(cfg=DGPConfig()):
    """Draw a dataset and its :class:`Truth`; deterministic given ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    sens, feats = _covariates(cfg, rng)
    truth = _bare_truth(cfg)
    mu, s2 = truth.params(sens, feats)
    durations = sample_gamma(rng, mu * mu / s2, mu / s2)
    if np.any(durations <= 0):
        raise ArithmeticError("generated a non-positive duration; increase time_scale")
    prob = ltu_probability(mu, s2, cfg.threshold)
    truth = replace(truth, mu=mu, sigma2=s2, prob=np.asarray(prob, dtype=float))
    data = Dataset(cfg.schema(), sens, feats, durations, "train")
    return data, truth


def ltu_labels(data, threshold=LTU_THRESHOLD):
    return (data.outcome >= threshold).astype(int)


def as_binary(data, threshold=LTU_THRESHOLD):
    """Same rows with the outcome replaced by the LTU indicator."""
    s = data.schema
    schema = Schema(s.sensitive, s.features, "ltu", "binary")
    return Dataset(schema, dict(data.sensitive), data.features, ltu_labels(data, threshold), data.split)


def calibrate_time_scale(cfg=DGPConfig(), target=0.146, n_pilot=400_000, seed=12345, tol=1e-12):
    """Bisect on ``log time_scale`` until the mean true LTU probability hits ``target``.

    Uses exact per-row probabilities on a pilot covariate sample, so the
    result is smooth in the scale and needs no duration draws.
    """
    pilot = replace(cfg, n=n_pilot, seed=seed)
    rng = np.random.default_rng(seed)
    sens, feats = _covariates(pilot, rng)

    def prevalence(log_c):
        mu, s2 = _bare_truth(replace(pilot, time_scale=math.exp(log_c))).params(sens, feats)
        return float(np.mean(ltu_probability(mu, s2, cfg.threshold)))

    lo, hi = math.log(1e-3), math.log(1e4)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if prevalence(mid) < target:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def write_generated(data, truth, path):
    """Write the CSV (with an ``ltu`` column) and a ``.truth.json`` sidecar."""
    path = Path(path)
    write_csv(data, path, extra={"ltu": ltu_labels(data, truth.cfg.threshold)})
    sidecar = truth_path(path)
    sidecar.write_text(json.dumps(truth.to_dict(), indent=1) + "\n")
    return sidecar


def truth_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".truth.json")
