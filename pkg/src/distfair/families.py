"""Gamma (mean/variance) and Bernoulli families.

Every family works on the link scale: callers pass linear predictors
``eta`` of shape ``(n, n_params)`` and get back per-row negative
log-likelihoods and their gradients with respect to ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .special import digamma, gammainc, gammaln

LTU_THRESHOLD = 12.0


def link_exp(eta):
    return np.exp(eta)


_SMALLEST_POSITIVE = np.nextafter(0.0, 1.0)


def link_logit_inv(eta):
    """Numerically stable logistic function.

    The result never underflows to exactly 0; very negative ``eta`` returns
    the smallest positive subnormal.
    """
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    out = np.maximum(out, _SMALLEST_POSITIVE)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution in (mean, variance) form."""

    mu: float
    sigma2: float

    def __post_init__(self):
        if not (self.mu > 0 and self.sigma2 > 0):
            raise ValueError(f"GammaParams needs mu > 0 and sigma2 > 0, got {self.mu}, {self.sigma2}")

    @property
    def shape(self):
        return self.mu**2 / self.sigma2

    @property
    def rate(self):
        return self.mu / self.sigma2


@dataclass(frozen=True)
class BernoulliParams:
    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"BernoulliParams needs 0 < p < 1, got {self.p}")


def shape_rate(mu, sigma2):
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    return mu * mu / sigma2, mu / sigma2


def _check_durations(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise ValueError("gamma likelihood requires durations y > 0")
    return y


def gamma_nll(y, eta_mu, eta_sigma2):
    """Gamma negative log-likelihood and its gradient on the link scale.

    Both parameters use log links: ``mu = exp(eta_mu)`` and
    ``sigma2 = exp(eta_sigma2)``.  Shape ``k = mu**2 / sigma2`` and rate
    ``r = mu / sigma2``.

    Returns
    -------
    nll : ndarray
        Per-observation negative log-likelihood.
    grad : ndarray
        Array of shape ``(..., 2)`` holding ``d nll / d eta_mu`` and
        ``d nll / d eta_sigma2``.
    """
    y = _check_durations(y)
    eta_mu = np.asarray(eta_mu, dtype=float)
    eta_sigma2 = np.asarray(eta_sigma2, dtype=float)
    log_k = 2.0 * eta_mu - eta_sigma2
    log_r = eta_mu - eta_sigma2
    k = np.exp(log_k)
    ry = np.exp(log_r) * y
    log_y = np.log(y)
    nll = -k * log_r + gammaln(k) - (k - 1.0) * log_y + ry
    # d nll/dk = psi(k) - ln(r y);  dk/deta = (2k, -k);  dr/deta = (r, -r)
    dk = digamma(k) - (log_r + log_y)
    g_mu = 2.0 * k * dk + ry - k
    g_sigma2 = -k * dk - (ry - k)
    return nll, np.stack([g_mu, g_sigma2], axis=-1)


def gamma_cdf(y, mu, sigma2):
    """``P(T <= y)`` for a Gamma with mean ``mu`` and variance ``sigma2``."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("gamma_cdf requires finite y")
    if np.any(y < 0):
        raise ValueError("gamma_cdf requires y >= 0")
    k, r = shape_rate(mu, sigma2)
    return gammainc(k, r * y)


def ltu_probability(mu, sigma2, threshold=LTU_THRESHOLD):
    """Probability that the duration reaches ``threshold`` (1 - CDF)."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return 1.0 - gamma_cdf(threshold, mu, sigma2)


def bernoulli_nll(y, eta):
    """Logistic negative log-likelihood ``log(1 + e^eta) - y * eta``.

    Returns the per-row loss and the gradient ``p - y``.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("bernoulli likelihood requires y in {0, 1}")
    nll = np.logaddexp(0.0, eta) - y * eta
    return nll, link_logit_inv(eta) - y


@dataclass(frozen=True)
class Family:
    """Dispatch table binding parameter names to links and the likelihood."""

    name: str
    params: tuple

    def inverse_links(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.name == "gamma":
            return np.exp(eta)
        return link_logit_inv(eta)

    def nll(self, y, eta):
        """Per-row loss and ``(n, n_params)`` gradient for ``eta`` of shape ``(n, n_params)``."""
        if self.name == "gamma":
            return gamma_nll(y, eta[:, 0], eta[:, 1])
        nll, g = bernoulli_nll(y, eta[:, 0])
        return nll, g[:, None]

    def check_outcome(self, y):
        if self.name == "gamma":
            _check_durations(y)
        elif np.any((np.asarray(y) != 0) & (np.asarray(y) != 1)):
            raise ValueError("bernoulli family requires binary outcomes")


GAMMA = Family("gamma", ("mu", "sigma2"))
BERNOULLI = Family("bernoulli", ("p",))
FAMILIES = {"gamma": GAMMA, "bernoulli": BERNOULLI}


def get_family(name):
    try:
        return FAMILIES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}") from None
