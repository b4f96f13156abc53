"""Log-gamma, digamma and the regularized incomplete gamma function.

All functions accept scalars or arrays and broadcast like numpy ufuncs.
Arguments must be strictly positive (``x >= 0`` for the incomplete gamma).
"""

from __future__ import annotations

import numpy as np

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.91893853320467274178

# Bernoulli numbers B_2k / (2k) for the digamma asymptotic series.
_DIGAMMA_ASYMP = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)

_TINY = 1e-300
_EPS = np.finfo(float).eps
_MAX_ITER = 2000


def _lanczos(x):
    # valid for x >= 0.5
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS_COEF[0])
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        acc = acc + c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def gammaln(x):
    """Natural log of the gamma function for ``x > 0``.

    Arguments below 1 are shifted up with ``lnG(x) = lnG(x + 1) - ln x``
    so the Lanczos sum is only evaluated where it is accurate.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("gammaln requires x > 0")
    small = x < 1.0
    shifted = np.where(small, x + 1.0, x)
    out = _lanczos(shifted)
    out = np.where(small, out - np.log(x), out)
    return out[()] if out.ndim == 0 else out


def digamma(x):
    """Digamma (psi) function for ``x > 0``.

    Uses the upward recurrence ``psi(x) = psi(x + 1) - 1/x`` until the
    argument reaches 10, then the asymptotic expansion.
    """
    x = np.array(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("digamma requires x > 0")
    shift = np.zeros_like(x)
    while True:
        low = x < 10.0
        if not np.any(low):
            break
        shift = np.where(low, shift - 1.0 / np.where(low, x, 1.0), shift)
        x = np.where(low, x + 1.0, x)
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for c in reversed(_DIGAMMA_ASYMP):
        series = (series + c) * inv2
    out = np.log(x) - 0.5 / x - series + shift
    return out[()] if out.ndim == 0 else out


def _series_p(a, x):
    """Power series for P(a, x); intended for x < a + 1."""
    ap = a.copy()
    term = 1.0 / a
    total = term.copy()
    active = np.ones(a.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        ap = ap + 1.0
        term = np.where(active, term * x / ap, 0.0)
        total = total + term
        active &= np.abs(term) >= np.abs(total) * _EPS
        if not np.any(active):
            break
    else:
        raise ArithmeticError("incomplete gamma series did not converge")
    log_pref = -x + a * np.log(x) - gammaln(a)
    return total * np.exp(log_pref)


def _contfrac_q(a, x):
    """Lentz continued fraction for Q(a, x); intended for x >= a + 1."""
    b = x + 1.0 - a
    c = np.full(a.shape, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(a.shape, dtype=bool)
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = np.where(active, d * c, 1.0)
        h = h * delta
        active &= np.abs(delta - 1.0) >= _EPS
        if not np.any(active):
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    log_pref = -x + a * np.log(x) - gammaln(a)
    return np.exp(log_pref) * h


def gammainc(a, x):
    """Regularized lower incomplete gamma ``P(a, x)``, clamped to [0, 1]."""
    a, x = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(x))):
        raise ValueError("gammainc requires finite arguments")
    if np.any(a <= 0) or np.any(x < 0):
        raise ValueError("gammainc requires a > 0 and x >= 0")
    out = np.zeros(a.shape)
    pos = x > 0
    use_series = pos & (x < a + 1.0)
    use_cf = pos & ~use_series
    if np.any(use_series):
        out[use_series] = _series_p(a[use_series], x[use_series])
    if np.any(use_cf):
        out[use_cf] = 1.0 - _contfrac_q(a[use_cf], x[use_cf])
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def gammaincc(a, x):
    """Regularized upper incomplete gamma ``Q(a, x) = 1 - P(a, x)``."""
    return 1.0 - gammainc(a, x)
