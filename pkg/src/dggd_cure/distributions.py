"""Defective Gompertz, defective generalized Gompertz and Weibull distributions.

All functions are vectorized over numpy broadcasting and work on the log
scale.  The Gompertz scale parameter is called ``mu`` throughout so it never
collides with regression coefficients.

The generalized Gompertz family is the Lehmann power family built on the
Gompertz CDF::

    F(t) = [1 - S0(t)] ** psi,   S0(t) = exp(-(mu / alpha) * (exp(alpha t) - 1))

With ``alpha < 0`` both distributions are improper and the survival function
plateaus at a cure fraction.  The cure-reparametrized form replaces ``mu``
with the cure probability ``p`` via ``mu = alpha * log(1 - (1 - p)**(1/psi))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GompertzParams",
    "DGGDParams",
    "DGGDCureParams",
    "WeibullParams",
    "log1mexp",
    "gompertz_logpdf",
    "gompertz_logsf",
    "gompertz_cure_fraction",
    "dggd_logpdf",
    "dggd_logsf",
    "dggd_cure_fraction",
    "reparam_to_scale",
    "cure_log_scale",
    "dggd_cure_logpdf",
    "dggd_cure_logsf",
    "dggd_quantile",
    "dggd_cure_quantile",
    "weibull_logpdf",
    "weibull_logsf",
]


def log1mexp(x):
    """Compute ``log(1 - exp(x))`` for ``x <= 0`` without cancellation."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -np.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _check_positive(name, value):
    if np.any(np.asarray(value) <= 0) or np.any(np.isnan(value)):
        raise ValueError(f"{name} must be strictly positive")


def _check_shape(alpha):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha == 0) or np.any(np.isnan(alpha)):
        raise ValueError("alpha must be nonzero (alpha = 0 is not supported)")
    return alpha


def _check_time(t, strict):
    t = np.asarray(t, dtype=float)
    if strict and np.any(t <= 0):
        raise ValueError("time must be strictly positive")
    if not strict and np.any(t < 0):
        raise ValueError("time must be non-negative")
    return t


def _check_prob(name, p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)) or np.any(np.isnan(p)):
        raise ValueError(f"{name} must lie in the open interval (0, 1)")
    return p


# Gompertz --------------------------------------------------------------------


def gompertz_logsf(t, alpha, mu):
    """Log survival ``-(mu/alpha) * (exp(alpha t) - 1)``.

    Returns ``-inf`` (without overflow warnings) when ``alpha > 0`` and
    ``alpha * t`` exceeds the floating point range.
    """
    t = _check_time(t, strict=False)
    alpha = _check_shape(alpha)
    _check_positive("mu", mu)
    with np.errstate(over="ignore"):
        return -(mu / alpha) * np.expm1(alpha * t)


def gompertz_logpdf(t, alpha, mu):
    """Log density ``log(mu) + alpha t - (mu/alpha) (exp(alpha t) - 1)``."""
    t = _check_time(t, strict=True)
    alpha = _check_shape(alpha)
    _check_positive("mu", mu)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.log(mu) + alpha * t - (mu / alpha) * np.expm1(alpha * t)
    return np.where(np.isnan(out), -np.inf, out)


def gompertz_cure_fraction(alpha, mu):
    """Plateau ``exp(mu / alpha)`` of the Gompertz survival function.

    A proper Gompertz (``alpha > 0``) has no cure fraction and gives 0; use
    :attr:`GompertzParams.is_defective` to tell the two cases apart.
    """
    alpha = _check_shape(alpha)
    _check_positive("mu", mu)
    with np.errstate(over="ignore"):
        return np.where(alpha < 0, np.exp(mu / alpha), 0.0)


# Generalized Gompertz --------------------------------------------------------


def _power_logpdf(log_f0, log_s0, psi):
    # log psi + log f0 + (psi - 1) log F0, with the psi == 1 term pinned to 0
    log_F0 = log1mexp(log_s0)
    with np.errstate(invalid="ignore"):
        tail = np.where(psi == 1, 0.0, (psi - 1.0) * log_F0)
    return np.log(psi) + log_f0 + tail


def _power_logsf(log_s0, psi):
    # log(1 - F0**psi); psi == 1 returns the baseline unchanged
    with np.errstate(invalid="ignore"):
        return np.where(psi == 1, log_s0, log1mexp(psi * log1mexp(log_s0)))


def dggd_logpdf(t, alpha, mu, psi):
    """Log density of the generalized Gompertz distribution.

    Parameters
    ----------
    t : array_like
        Strictly positive times.
    alpha : array_like
        Shape; negative values give the defective (cure) form.
    mu : array_like
        Positive Gompertz scale.
    psi : array_like
        Positive power parameter; ``psi = 1`` gives the Gompertz law.
    """
    _check_positive("psi", psi)
    psi = np.asarray(psi, dtype=float)
    return _power_logpdf(gompertz_logpdf(t, alpha, mu), gompertz_logsf(t, alpha, mu), psi)


def dggd_logsf(t, alpha, mu, psi):
    """Log survival ``log(1 - (1 - S0(t))**psi)``; zero at ``t = 0``."""
    _check_positive("psi", psi)
    psi = np.asarray(psi, dtype=float)
    return _power_logsf(gompertz_logsf(t, alpha, mu), psi)


def dggd_cure_fraction(alpha, mu, psi):
    """Cure fraction ``1 - (1 - exp(mu/alpha))**psi`` (0 when ``alpha > 0``)."""
    alpha = _check_shape(alpha)
    _check_positive("mu", mu)
    _check_positive("psi", psi)
    with np.errstate(over="ignore", divide="ignore"):
        log_p0 = np.where(alpha < 0, mu / alpha, -np.inf)
        out = -np.expm1(psi * log1mexp(log_p0))
    return np.where(alpha < 0, out, 0.0)


def cure_log_scale(p, psi):
    """``log(1 - (1 - p)**(1/psi))``, the (negative) log baseline cure fraction.

    This is the log of the Gompertz plateau ``p0`` that, raised through the
    power family, yields cure probability ``p``.
    """
    p = np.asarray(p, dtype=float)
    return log1mexp(np.log1p(-p) / psi)


def reparam_to_scale(alpha, p, psi):
    """Gompertz scale ``mu = alpha * log(1 - (1 - p)**(1/psi))`` for cure ``p``."""
    alpha = _check_shape(alpha)
    if np.any(alpha > 0):
        raise ValueError("the cure parametrization requires alpha < 0")
    p = _check_prob("p", p)
    _check_positive("psi", psi)
    return alpha * cure_log_scale(p, psi)


def dggd_cure_logsf(t, alpha, p, psi):
    """Log survival of the generalized Gompertz in cure parametrization."""
    t = _check_time(t, strict=False)
    alpha = _check_shape(alpha)
    if np.any(alpha > 0):
        raise ValueError("the cure parametrization requires alpha < 0")
    p = _check_prob("p", p)
    _check_positive("psi", psi)
    psi = np.asarray(psi, dtype=float)
    log_s0 = -cure_log_scale(p, psi) * np.expm1(alpha * t)
    return _power_logsf(log_s0, psi)


def dggd_cure_logpdf(t, alpha, p, psi):
    """Log density of the generalized Gompertz in cure parametrization.

    Evaluated as ``log psi + log(-alpha) + log(-L) + alpha t + log S0 +
    (psi - 1) log(1 - S0)`` with ``L = log(1 - (1 - p)**(1/psi))`` so that the
    density factor ``alpha * L`` stays positive for ``alpha < 0``.
    """
    t = _check_time(t, strict=True)
    alpha = _check_shape(alpha)
    if np.any(alpha > 0):
        raise ValueError("the cure parametrization requires alpha < 0")
    p = _check_prob("p", p)
    _check_positive("psi", psi)
    psi = np.asarray(psi, dtype=float)
    L = cure_log_scale(p, psi)
    log_s0 = -L * np.expm1(alpha * t)
    log_f0 = np.log(-alpha) + np.log(-L) + alpha * t + log_s0
    return _power_logpdf(log_f0, log_s0, psi)


def dggd_quantile(u, alpha, mu, psi, tol=1e-10, max_iter=2000):
    """Invert the (possibly improper) CDF ``F(t) = 1 - S(t)`` by bisection.

    The bracket ``[0, t_hi]`` is grown geometrically until ``F(t_hi) > u``
    and then halved until its width drops below ``tol`` (absolute) or below
    machine resolution relative to the root, whichever is smaller.

    Parameters
    ----------
    u : array_like
        Target probabilities in ``(0, 1 - p)`` where ``p`` is the cure fraction.
    alpha, mu, psi : array_like
        Distribution parameters, broadcast against ``u``.

    Raises
    ------
    ValueError
        If some ``u`` is at or beyond the attainable mass ``1 - p``.
    """
    u, alpha, mu, psi = np.broadcast_arrays(
        np.asarray(u, dtype=float), _check_shape(alpha), np.asarray(mu, float), np.asarray(psi, float)
    )
    _check_positive("mu", mu)
    _check_positive("psi", psi)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie in (0, 1)")
    mass = 1.0 - dggd_cure_fraction(alpha, mu, psi)
    if np.any(u >= mass):
        raise ValueError("mass exceeds susceptible fraction: u must be below 1 - cure fraction")

    # log(1 - u) is compared against log S(t) so that u close to 1 - p keeps precision
    target = np.log1p(-u)

    def excess(t):
        # positive once F(t) > u
        return target - _power_logsf(gompertz_logsf(t, alpha, mu), psi)

    hi = np.ones_like(u)
    for _ in range(max_iter):
        low = excess(hi) <= 0
        if not low.any():
            break
        hi = np.where(low, 2.0 * hi, hi)
    lo = np.zeros_like(u)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        width = hi - lo
        done = (width <= np.minimum(tol, 4 * np.finfo(float).eps * hi)) | (mid == lo) | (mid == hi)
        if done.all():
            break
        above = excess(mid) > 0
        hi = np.where(done | ~above, hi, mid)
        lo = np.where(done | above, lo, mid)
    t = 0.5 * (lo + hi)
    return t if t.ndim else float(t)


def dggd_cure_quantile(u, alpha, p, psi, **kwargs):
    """Quantile in the cure parametrization (``u`` in ``(0, 1 - p)``)."""
    return dggd_quantile(u, alpha, reparam_to_scale(alpha, p, psi), psi, **kwargs)


# Weibull ---------------------------------------------------------------------


def weibull_logsf(t, shape, rate):
    """Log survival ``-(rate * t) ** shape``."""
    t = _check_time(t, strict=False)
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    return -((rate * t) ** shape)


def weibull_logpdf(t, shape, rate):
    """Log density ``log(shape * rate) + (shape - 1) log(rate t) - (rate t)**shape``."""
    t = _check_time(t, strict=True)
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    z = np.log(rate * t)
    return np.log(shape) + np.log(rate) + (shape - 1.0) * z - np.exp(shape * z)


# Parameter containers --------------------------------------------------------


@dataclass(frozen=True)
class GompertzParams:
    """Gompertz shape ``alpha`` (defective when negative) and scale ``mu``."""

    alpha: float
    mu: float

    def __post_init__(self):
        _check_shape(self.alpha)
        _check_positive("mu", self.mu)

    @property
    def is_defective(self) -> bool:
        return self.alpha < 0

    def logpdf(self, t):
        return gompertz_logpdf(t, self.alpha, self.mu)

    def logsf(self, t):
        return gompertz_logsf(t, self.alpha, self.mu)

    def cure_fraction(self) -> float:
        return float(gompertz_cure_fraction(self.alpha, self.mu))


@dataclass(frozen=True)
class DGGDParams:
    """Generalized Gompertz with shape ``alpha``, scale ``mu`` and power ``psi``."""

    alpha: float
    mu: float
    psi: float

    def __post_init__(self):
        _check_shape(self.alpha)
        _check_positive("mu", self.mu)
        _check_positive("psi", self.psi)

    @property
    def is_defective(self) -> bool:
        return self.alpha < 0

    def logpdf(self, t):
        return dggd_logpdf(t, self.alpha, self.mu, self.psi)

    def logsf(self, t):
        return dggd_logsf(t, self.alpha, self.mu, self.psi)

    def cure_fraction(self) -> float:
        return float(dggd_cure_fraction(self.alpha, self.mu, self.psi))

    def quantile(self, u):
        return dggd_quantile(u, self.alpha, self.mu, self.psi)


@dataclass(frozen=True)
class DGGDCureParams:
    """Generalized Gompertz parametrized by its cure probability ``p``."""

    alpha: float
    p: float
    psi: float

    def __post_init__(self):
        if not self.alpha < 0:
            raise ValueError("alpha must be strictly negative")
        _check_prob("p", self.p)
        _check_positive("psi", self.psi)

    @property
    def mu(self) -> float:
        return float(reparam_to_scale(self.alpha, self.p, self.psi))

    def to_scale(self) -> DGGDParams:
        return DGGDParams(self.alpha, self.mu, self.psi)

    def logpdf(self, t):
        return dggd_cure_logpdf(t, self.alpha, self.p, self.psi)

    def logsf(self, t):
        return dggd_cure_logsf(t, self.alpha, self.p, self.psi)

    def cure_fraction(self) -> float:
        return self.p

    def quantile(self, u):
        return dggd_cure_quantile(u, self.alpha, self.p, self.psi)


@dataclass(frozen=True)
class WeibullParams:
    """Weibull with shape ``lambda`` and rate ``gamma``: ``S(t) = exp(-(gamma t)**lambda)``."""

    shape: float
    rate: float

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)

    def logpdf(self, t):
        return weibull_logpdf(t, self.shape, self.rate)

    def logsf(self, t):
        return weibull_logsf(t, self.shape, self.rate)
