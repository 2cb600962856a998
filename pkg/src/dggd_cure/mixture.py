"""Weibull standard mixture cure model, the comparison baseline.

Population survival is ``S_pop(t) = pi + (1 - pi) * S_W(t)`` where ``pi`` is
the cure fraction (the limit of ``S_pop``) and ``S_W`` is a proper Weibull
survival function with shape ``lambda`` and rate ``gamma``:
``S_W(t) = exp(-(gamma t)**lambda)``.  The cure fraction follows the same
logistic link as the DGGD regression, ``pi_i = logistic(x_i' beta)``.

Sampling happens on ``(beta, a, b)`` with ``lambda = exp(a)`` and
``gamma = exp(b)``; the log-Jacobian ``a + b`` is included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .distributions import WeibullParams, _check_prob, _check_time, weibull_logpdf, weibull_logsf
from .regression import ETA_CLIP, PriorSpec, gamma_logpdf, normal_logpdf

try:
    from . import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

__all__ = [
    "MixtureParamVector",
    "mixture_log_survival",
    "mixture_log_pdf",
    "WeibullMixtureCureModel",
    "mixture_log_posterior",
    "mixture_grad_log_posterior",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureParamVector:
    """Constrained mixture parameters: link coefficients, Weibull shape and rate."""

    beta: np.ndarray
    shape: float
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Weibull shape and rate must be strictly positive")

    def to_array(self):
        return np.concatenate([self.beta, [self.shape, self.rate]])


def _weibull(weibull):
    if isinstance(weibull, WeibullParams):
        return weibull.shape, weibull.rate
    shape, rate = weibull
    return shape, rate


def mixture_log_survival(t, pi, weibull):
    """``log(pi + (1 - pi) S_W(t))``, computed with a log-sum-exp."""
    t = _check_time(t, strict=False)
    pi = _check_prob("pi", pi)
    shape, rate = _weibull(weibull)
    log_sw = weibull_logsf(t, shape, rate)
    with np.errstate(divide="ignore"):
        return np.logaddexp(np.log(pi), np.log1p(-pi) + log_sw)


def mixture_log_pdf(t, pi, weibull):
    """Log density of the improper mixture, ``log(1 - pi) + log f_W(t)``.

    ``pi`` may be 0 (proper Weibull) or 1 (no susceptibles, density -inf).
    """
    t = _check_time(t, strict=True)
    pi = np.asarray(pi, dtype=float)
    if np.any((pi < 0) | (pi > 1)):
        raise ValueError("pi must lie in [0, 1]")
    shape, rate = _weibull(weibull)
    with np.errstate(divide="ignore"):
        return np.log1p(-pi) + weibull_logpdf(t, shape, rate)


def _mixture_terms(time, event, eta, shape, rate, grad):
    """Per-observation log-likelihood and partials w.r.t. (eta, log shape, log rate)."""
    inside = np.abs(eta) < ETA_CLIP
    eta = np.clip(eta, -ETA_CLIP, ETA_CLIP)
    logp = -np.logaddexp(0.0, -eta)
    log1mp = -np.logaddexp(0.0, eta)
    z = np.log(rate) + np.log(time)
    h = np.exp(shape * z)
    log_event = log1mp + np.log(shape) + np.log(rate) + (shape - 1.0) * z - h
    log_cens = np.logaddexp(logp, log1mp - h)
    ll = np.where(event == 1, log_event, log_cens)
    if not grad:
        return ll, None
    p = expit(eta)
    r = np.exp(log1mp - h - log_cens)
    d_eta = np.where(event == 1, -p, p * (1.0 - p) * -np.expm1(-h) / np.exp(log_cens))
    d_eta = np.where(inside, d_eta, 0.0)
    d_a = np.where(event == 1, 1.0 + shape * z * (1.0 - h), -r * h * shape * z)
    d_b = np.where(event == 1, shape * (1.0 - h), -r * h * shape)
    return ll, (d_eta, d_a, d_b)


class WeibullMixtureCureModel:
    """Log posterior of the Weibull mixture cure regression.

    Mirrors :class:`dggd_cure.regression.DGGDCureModel`: constrained rows are
    ``(beta, lambda, gamma)``, unconstrained rows ``(beta, log lambda,
    log gamma)``.
    """

    family = "weibull-mixture"
    fixed_psi = False

    def __init__(self, data, priors=None, likelihood_weight=1.0, backend=None):
        if backend is None:
            backend = "numba" if _kernels is not None else "numpy"
        if backend not in ("numba", "numpy") or (backend == "numba" and _kernels is None):
            raise ValueError(f"backend {backend!r} is not available")
        self.backend = backend
        self.data = data
        self.priors = priors if priors is not None else PriorSpec()
        self.likelihood_weight = float(likelihood_weight)
        self._beta_mean, self._beta_sd = self.priors.beta_moments(data.n_coef)

    @property
    def dim(self):
        return self.data.n_coef + 2

    @property
    def param_names(self):
        return [f"beta{j}" for j in range(self.data.n_coef)] + ["lambda", "gamma"]

    def constrain(self, u):
        out = np.array(u, dtype=float)
        k = self.data.n_coef
        out[..., k:] = np.exp(out[..., k:])
        return out

    def unconstrain(self, theta):
        out = np.array(theta, dtype=float)
        k = self.data.n_coef
        out[..., k:] = np.log(out[..., k:])
        return out

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = self.data.n_coef
        return theta[..., :k], theta[..., k], theta[..., k + 1]

    def to_param_vector(self, theta):
        beta, shape, rate = self._split(theta)
        return MixtureParamVector(beta, float(shape), float(rate))

    def pointwise_loglik(self, theta):
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        beta, shape, rate = self._split(np.atleast_2d(theta))
        eta = beta @ self.data.X.T
        with np.errstate(all="ignore"):
            ll, _ = _mixture_terms(self.data.time, self.data.event, eta, shape[:, None], rate[:, None], False)
        return ll[0] if single else ll

    def log_likelihood(self, theta):
        if self.data.n == 0:
            return 0.0
        return float(np.sum(self.pointwise_loglik(theta)))

    def log_survival(self, theta, time=None, X=None):
        """Population log survival ``log(pi_i + (1 - pi_i) S_W(t_i))``."""
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        beta, shape, rate = self._split(np.atleast_2d(theta))
        X = self.data.X if X is None else np.asarray(X, dtype=float)
        time = self.data.time if time is None else np.asarray(time, dtype=float)
        eta = np.clip(beta @ X.T, -ETA_CLIP, ETA_CLIP)
        log_sw = -np.exp(shape[:, None] * np.log(rate[:, None] * time))
        with np.errstate(divide="ignore"):
            out = np.logaddexp(-np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta) + log_sw)
        return out[0] if single else out

    def log_prior(self, theta):
        beta, shape, rate = self._split(theta)
        pr = self.priors
        lp = np.sum(normal_logpdf(beta, self._beta_mean, self._beta_sd))
        lp += gamma_logpdf(shape, pr.weibull_shape_shape, pr.weibull_shape_rate)
        lp += gamma_logpdf(rate, pr.weibull_rate_shape, pr.weibull_rate_rate)
        return float(lp)

    def log_posterior(self, theta):
        return self.likelihood_weight * self.log_likelihood(theta) + self.log_prior(theta)

    def logp_and_grad(self, u):
        u = np.asarray(u, dtype=float)
        k = self.data.n_coef
        beta, a, b = u[:k], u[k], u[k + 1]
        with np.errstate(over="ignore"):
            shape, rate = np.exp(a), np.exp(b)
        grad = np.zeros_like(u)
        lp = 0.0
        lw = self.likelihood_weight
        data = self.data
        if data.n and lw != 0.0:
            if self.backend == "numba":
                gb = np.empty(k)
                ll, d_a, d_b = _kernels.mixture_loglik_grad(
                    data.time, data.event, data.X, beta, shape, rate, ETA_CLIP, gb
                )
            else:
                with np.errstate(all="ignore"):
                    terms, (d_eta, da, db) = _mixture_terms(data.time, data.event, data.X @ beta, shape, rate, True)
                ll, gb, d_a, d_b = terms.sum(), d_eta @ data.X, da.sum(), db.sum()
            lp = lw * ll
            grad[:k] = lw * gb
            grad[k] = lw * d_a
            grad[k + 1] = lw * d_b

        pr = self.priors
        z = (beta - self._beta_mean) / self._beta_sd
        lp += np.sum(-0.5 * z * z - np.log(self._beta_sd)) - 0.5 * k * _LOG_2PI
        grad[:k] -= z / self._beta_sd
        with np.errstate(all="ignore"):
            lp += gamma_logpdf(shape, pr.weibull_shape_shape, pr.weibull_shape_rate) + a
            lp += gamma_logpdf(rate, pr.weibull_rate_shape, pr.weibull_rate_rate) + b
            grad[k] += pr.weibull_shape_shape - pr.weibull_shape_rate * shape
            grad[k + 1] += pr.weibull_rate_shape - pr.weibull_rate_rate * rate
        if not np.isfinite(lp):
            return -np.inf, grad
        return float(lp), grad

    def log_posterior_unconstrained(self, u):
        return self.logp_and_grad(u)[0]

    def grad_log_posterior_unconstrained(self, u):
        return self.logp_and_grad(u)[1]

    def cure_probability(self, theta, X=None):
        beta, _, _ = self._split(theta)
        X = self.data.X if X is None else X
        return expit(np.clip(X @ beta, -ETA_CLIP, ETA_CLIP))


def mixture_log_posterior(u, data, priors=None):
    return WeibullMixtureCureModel(data, priors).log_posterior_unconstrained(u)


def mixture_grad_log_posterior(u, data, priors=None):
    return WeibullMixtureCureModel(data, priors).grad_log_posterior_unconstrained(u)
