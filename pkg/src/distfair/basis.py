"""Design blocks: group indicators, P-spline basis, L1 linear terms."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

PENALTIES = ("none", "l1", "quadratic")


@dataclass(frozen=True)
class DesignBlock:
    matrix: np.ndarray = field(repr=False)
    penalty: str
    names: tuple
    penalty_matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("design block matrix must be 2-d")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "names", tuple(self.names))
        if self.penalty not in PENALTIES:
            raise ValueError(f"unknown penalty kind {self.penalty!r}")
        if m.shape[1] != len(self.names):
            raise ValueError("column count does not match name count")
        if self.penalty == "quadratic":
            pm = np.asarray(self.penalty_matrix, dtype=float)
            if pm.shape != (m.shape[1], m.shape[1]) or not np.allclose(pm, pm.T):
                raise ValueError("quadratic penalty matrix must be square and symmetric")
            object.__setattr__(self, "penalty_matrix", pm)

    @property
    def width(self):
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SplineConfig:
    degree: int = 3
    n_knots: int = 20
    penalty_order: int = 2
    smoothing: float = 1.0

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("spline degree must be >= 1")
        if self.n_knots + 2 < self.degree + 1:
            raise ValueError("too few knots for the spline degree")
        if self.smoothing < 0:
            raise ValueError("spline smoothing weight must be >= 0")
        if not 0 <= self.penalty_order < self.n_basis:
            raise ValueError("penalty order must be below the number of basis functions")

    @property
    def n_basis(self):
        return self.n_knots + 1 + self.degree

    def knots(self):
        """Equally spaced knots on [0, 1], extended by ``degree`` spacings each side."""
        h = 1.0 / (self.n_knots + 1)
        idx = np.arange(-self.degree, self.n_knots + 2 + self.degree)
        return idx * h


def group_cells(categories):
    """All cells of the cross product, first attribute varying fastest.

    ``categories`` is an ordered mapping ``column -> categories``.  For
    gender (male, female) by citizenship (German, NonGerman) this gives
    male-German, female-German, male-NonGerman, female-NonGerman.
    """
    cols = list(categories)
    combos = itertools.product(*(categories[c] for c in reversed(cols)))
    return [tuple(reversed(c)) for c in combos]


def cell_label(cell):
    return "-".join(cell)


def cell_index(sensitive, categories):
    """Per-row index into :func:`group_cells` for columns in ``sensitive``."""
    cols = list(categories)
    n = len(sensitive[cols[0]])
    idx = np.zeros(n, dtype=int)
    stride = 1
    for c in cols:
        cats = categories[c]
        lookup = {v: i for i, v in enumerate(cats)}
        try:
            codes = np.fromiter((lookup[v] for v in sensitive[c]), dtype=int, count=n)
        except KeyError as e:
            raise ValueError(f"unknown category {e.args[0]!r} in column {c!r}") from None
        idx += codes * stride
        stride *= len(cats)
    return idx


def one_hot(sensitive, categories):
    """Indicator block with one column per group cell and no penalty."""
    cells = group_cells(categories)
    idx = cell_index(sensitive, categories)
    m = np.zeros((len(idx), len(cells)))
    m[np.arange(len(idx)), idx] = 1.0
    return DesignBlock(m, "none", [cell_label(c) for c in cells])


def bspline_basis(x, knots, degree):
    """Evaluate all B-splines on ``knots`` at ``x`` with the Cox-de Boor recursion."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(knots, dtype=float)
    # degree 0: indicators of [t_j, t_{j+1})
    b = ((x[:, None] >= t[None, :-1]) & (x[:, None] < t[None, 1:])).astype(float)
    for d in range(1, degree + 1):
        left_den = t[d:-1] - t[: -d - 1]
        right_den = t[d + 1 :] - t[1:-d]
        left = (x[:, None] - t[None, : -d - 1]) / left_den * b[:, :-1]
        right = (t[None, d + 1 :] - x[:, None]) / right_den * b[:, 1:]
        b = left + right
    return b


def difference_matrix(n, order):
    return np.diff(np.eye(n), n=order, axis=0)


def bspline_block(x, cfg=SplineConfig(), name="x"):
    """P-spline block: B-spline basis plus difference penalty ``D^T D``."""
    x = np.asarray(x, dtype=float)
    basis = bspline_basis(x, cfg.knots(), cfg.degree)
    if len(np.unique(x)) < cfg.n_basis:
        logger.warning("fewer distinct values of %r than spline basis functions", name)
    d = difference_matrix(cfg.n_basis, cfg.penalty_order)
    names = [f"{name}_bs{j:02d}" for j in range(cfg.n_basis)]
    return DesignBlock(basis, "quadratic", names, d.T @ d)


def linear_block(x, names):
    """Pass-through block for standardized features, tagged with an L1 penalty."""
    return DesignBlock(np.asarray(x, dtype=float).reshape(len(x), -1), "l1", names)
