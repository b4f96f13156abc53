"""Penalized maximum likelihood by proximal gradient descent, and lambda tuning.

The fitted objective is

    mean_i nll(y_i; theta(x_i)) + lam_s * sum_k gamma_k' P gamma_k + lam * sum_k |beta1_k|_1

with group coefficients unpenalized, a P-spline penalty ``P = D'D`` on the
spline coefficients and an L1 penalty on the linear block.  Every epoch is
one full-batch proximal gradient step with backtracking.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .datamodel import standardize
from .families import get_family
from .model import FittedModel, build_design, coef_from_matrix

logger = logging.getLogger(__name__)

SNAP = 1e-12
MIN_STEP = 1e-30


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    """Fit settings.  ``lam_s=None`` takes the smoothing weight from the spline config."""

    lam: float = 0.0
    lam_s: float | None = None
    max_epochs: int = 60
    tol: float = 1e-8
    step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    accelerate: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0 or (self.lam_s is not None and self.lam_s < 0):
            raise ValueError("penalty weights must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.step <= 0 or self.armijo < 0 or self.tol < 0:
            raise ValueError("step must be positive; armijo and tol non-negative")


def soft_threshold(x, amount):
    return np.sign(x) * np.maximum(np.abs(x) - amount, 0.0)


class _Problem:
    """Smooth part, prox and objective on a centred reparametrization.

    Linear features are centred internally; since the group indicators sum
    to one in every row, ``A b0 + X b1 = A (b0 + xbar'b1) + (X - xbar) b1``
    and the objective is unchanged.  Only the unpenalized group
    coefficients absorb the shift, which is undone in :meth:`to_original`.
    """

    def __init__(self, family, design, y, lam, lam_s):
        self.family = family
        self.y = y
        self.n = len(y)
        self.sl = design.slices
        z = design.matrix.copy()
        lin = self.sl["linear"]
        self.xbar = z[:, lin].mean(axis=0) if z[:, lin].shape[1] else np.zeros(0)
        z[:, lin] -= self.xbar
        self.z = z
        self.penalty = design.spline_penalty
        self.lam = lam
        self.lam_s = lam_s

    def smooth(self, w, with_grad=True):
        eta = self.z @ w
        nll, g = self.family.nll(self.y, eta)
        f = float(np.sum(nll) / self.n)
        grad = self.z.T @ g / self.n if with_grad else None
        if self.penalty is not None and self.lam_s > 0:
            gam = w[self.sl["spline"]]
            pg = self.penalty @ gam
            f += self.lam_s * float(np.sum(gam * pg))
            if with_grad:
                grad[self.sl["spline"]] += 2.0 * self.lam_s * pg
        return f, grad

    def l1(self, w):
        return self.lam * float(np.sum(np.abs(w[self.sl["linear"]])))

    def prox(self, v, t):
        out = v.copy()
        lin = self.sl["linear"]
        out[lin] = soft_threshold(v[lin], t * self.lam)
        return out

    def to_original(self, w):
        w = w.copy()
        lin = self.sl["linear"]
        w[self.sl["group"]] -= self.xbar @ w[lin]
        return w


def _backtrack(problem, cfg, point, f, grad, t):
    """Prox step from ``point`` with step shrinking until the quadratic bound holds."""
    while True:
        cand = problem.prox(point - t * grad, t)
        delta = cand - point
        sq = float(np.sum(delta * delta))
        if sq == 0.0:
            return cand, math.nan, t, sq
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            try:
                f_new, _ = problem.smooth(cand, with_grad=False)
            except (ValueError, ArithmeticError):
                f_new = math.inf
        if math.isfinite(f_new) and f_new <= f + float(np.sum(grad * delta)) + sq / (2.0 * t):
            return cand, f_new, t, sq
        t *= cfg.shrink
        if t < MIN_STEP:
            return point, math.nan, t, 0.0


def _fit_matrix(problem, cfg, w0):
    """Monotone accelerated proximal gradient (MFISTA) with momentum restart.

    Each epoch takes one backtracked prox step from the extrapolated point
    and keeps whichever of the candidate and the current iterate has the
    lower objective, so the objective never increases.  With
    ``cfg.accelerate`` false this is plain proximal gradient descent.
    """
    w = w0.copy()
    f, _ = problem.smooth(w, with_grad=False)
    obj = f + problem.l1(w)
    if not math.isfinite(obj):
        raise FitError("objective is not finite at the initial coefficients (epoch 0)")
    history = [obj]
    y = w.copy()
    momentum = 1.0
    step = cfg.step
    converged = False
    epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        f_y, grad_y = problem.smooth(y)
        if not math.isfinite(f_y):
            y, momentum = w.copy(), 1.0
            f_y, grad_y = problem.smooth(y)
        cand, f_c, t, sq = _backtrack(problem, cfg, y, f_y, grad_y, step)
        obj_c = f_c + problem.l1(cand) if sq > 0 else math.inf
        if obj_c <= obj - cfg.armijo * sq / t:
            w_new, obj_new = cand, obj_c
        else:
            w_new, obj_new = w, obj
        if w_new is w:
            if momentum == 1.0:
                # a plain gradient step from w made no progress
                converged = True
                break
            # restart the momentum from the current iterate
            y, momentum = w.copy(), 1.0
            step = min(t / cfg.shrink, cfg.step)
            history.append(obj)
            epochs = epoch
            continue
        next_m = (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0 if cfg.accelerate else 1.0
        y = w_new + (momentum / next_m) * (cand - w_new) + ((momentum - 1.0) / next_m) * (w_new - w)
        change = abs(obj - obj_new) / max(abs(obj), 1.0)
        w, obj, momentum = w_new, obj_new, next_m
        history.append(obj)
        epochs = epoch
        step = min(t / cfg.shrink, cfg.step)
        if change < cfg.tol:
            converged = True
            break
    return w, history, epochs, converged


def fit(spec, train, cfg=FitConfig()):
    """Fit ``spec`` to the raw training data by proximal gradient descent.

    Features are min-max standardized on ``train``; the stats are stored on
    the returned model.  All coefficients start at zero and the run is
    deterministic given ``(train, cfg)``.
    """
    spec.check_schema(train.schema)
    family = get_family(spec.family)
    family.check_outcome(train.outcome)
    std, stats = standardize(train.with_split("train"))
    design = build_design(spec, std.sensitive, std.features, std.schema.features)
    lam_s = spec.spline.smoothing if cfg.lam_s is None else cfg.lam_s
    problem = _Problem(family, design, std.outcome, cfg.lam, lam_s)
    w0 = np.zeros((design.matrix.shape[1], len(spec.params)))
    w, history, epochs, converged = _fit_matrix(problem, cfg, w0)
    w = problem.to_original(w)
    lin = design.slices["linear"]
    w[lin] = np.where(np.abs(w[lin]) < SNAP, 0.0, w[lin])

    # objective at the returned coefficients, on the uncentred design
    check = _Problem(family, design, std.outcome, cfg.lam, lam_s)
    check.z = design.matrix
    f, _ = check.smooth(w, with_grad=False)
    final = f + check.l1(w)
    meta = {
        "lam": cfg.lam,
        "lam_s": lam_s,
        "max_epochs": cfg.max_epochs,
        "epochs": epochs,
        "converged": converged,
        "objective": final,
        "history": history,
        "seed": cfg.seed,
        "n_train": len(train),
    }
    logger.info("fit %s: lam=%g epochs=%d objective=%.10g", spec.family, cfg.lam, epochs, final)
    return FittedModel(spec, stats, coef_from_matrix(spec, w), design.spline_center, meta)


def penalized_objective(model, data):
    """Training objective of ``model`` evaluated on raw ``data``."""
    std, _ = standardize(data, model.stats)
    design = model.design(std)
    lam_s = model.meta.get("lam_s", model.spec.spline.smoothing)
    p = _Problem(model.family, design, std.outcome, model.meta.get("lam", 0.0), lam_s)
    p.z = design.matrix
    f, _ = p.smooth(model.coef_matrix(), with_grad=False)
    return f + p.l1(model.coef_matrix())


def mean_nll(model, data):
    """Unpenalized mean negative log-likelihood of ``model`` on raw ``data``."""
    std, _ = standardize(data, model.stats)
    eta = model.linear_predictor(std)
    nll, _ = model.family.nll(std.outcome, eta)
    return float(np.mean(nll))


def default_grid(n=20, low=1e-5, high=0.05):
    return np.logspace(math.log10(low), math.log10(high), n)


@dataclass(frozen=True)
class TuneResult:
    grid: tuple
    scores: tuple
    errors: tuple
    selected: float
    model: FittedModel

    def rows(self):
        for lam, score, err in zip(self.grid, self.scores, self.errors):
            yield lam, score, err


def tune_lambda(spec, train, validation, grid=None, cfg=FitConfig(), n_jobs=1):
    """Fit once per lambda and pick the lowest validation mean NLL.

    Ties go to the smaller lambda.  Failed fits are recorded and skipped;
    if every fit fails a :class:`FitError` is raised.
    """
    grid = tuple(float(v) for v in (default_grid() if grid is None else grid))
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(v < 0 for v in grid):
        raise ValueError("lambda values must be >= 0")

    def one(lam):
        try:
            m = fit(spec, train, replace(cfg, lam=lam))
            return m, mean_nll(m, validation), None
        except (FitError, ValueError, ArithmeticError) as e:
            return None, math.nan, str(e)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(one, grid))
    else:
        results = [one(lam) for lam in grid]

    best = None
    for i, (lam, (m, score, err)) in enumerate(zip(grid, results)):
        if err is not None or not math.isfinite(score):
            continue
        if best is None or score < results[best][1] or (score == results[best][1] and lam < grid[best]):
            best = i
    if best is None:
        raise FitError("every lambda in the grid failed to fit")
    return TuneResult(
        grid,
        tuple(r[1] for r in results),
        tuple(r[2] for r in results),
        grid[best],
        results[best][0],
    )
