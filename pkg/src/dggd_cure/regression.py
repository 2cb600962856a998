"""Bayesian defective generalized Gompertz cure regression.

The cure probability of subject ``i`` follows a logistic link,
``p_i = 1 / (1 + exp(-x_i' beta))``, and enters the survival law through the
cure parametrization of the generalized Gompertz distribution.  The sampler
works on the unconstrained vector ``(beta, a, s)`` with ``alpha = -exp(a)``
and ``psi = exp(s)``; the log-Jacobian ``a + s`` is added to the posterior.

For the ``gompertz`` family ``psi`` is pinned at 1 and dropped from both the
parameter vector and the prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from .distributions import dggd_cure_logsf, log1mexp

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba missing
    _kernels = None

__all__ = [
    "ETA_CLIP",
    "SurvivalDataset",
    "ParamVector",
    "PriorSpec",
    "cure_probability",
    "DGGDCureModel",
    "log_likelihood",
    "log_prior",
    "log_posterior_unconstrained",
    "grad_log_posterior_unconstrained",
]

#: Linear predictors are clipped to ``[-ETA_CLIP, ETA_CLIP]`` so that both
#: ``log p`` and ``log(1 - p)`` stay finite.
ETA_CLIP = 35.0

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored survival data with a design matrix.

    Parameters
    ----------
    time : array of shape (n,)
        Strictly positive observed times.
    event : array of shape (n,)
        1 for an observed event, 0 for a censored time.
    X : array of shape (n, q + 1)
        Design matrix whose first column is the intercept (all ones).
    feature_names : tuple of str, optional
        Names of the ``q`` covariate columns (excluding the intercept).
    """

    time: np.ndarray
    event: np.ndarray
    X: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n = time.shape[0]
        if event.shape != (n,) or X.shape[0] != n:
            raise ValueError("time, event and X must have the same number of rows")
        if n and not np.all(time > 0):
            raise ValueError("all times must be strictly positive")
        if n and not np.all(np.isfinite(time)):
            raise ValueError("all times must be finite")
        if not np.all((event == 0) | (event == 1)):
            raise ValueError("event indicators must be 0 or 1")
        if X.shape[1] < 1 or (n and not np.all(X[:, 0] == 1.0)):
            raise ValueError("the first column of X must be the intercept (all ones)")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates must be finite")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(1, X.shape[1]))
        if len(names) != X.shape[1] - 1:
            raise ValueError("feature_names must name every non-intercept column")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event.astype(np.int64))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_covariates(cls, time, event, covariates=None, feature_names=()):
        """Build a dataset, prepending the intercept column to ``covariates``."""
        time = np.asarray(time, dtype=float).reshape(-1)
        if covariates is None:
            covariates = np.empty((time.shape[0], 0))
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1)
        X = np.column_stack([np.ones(time.shape[0]), covariates])
        return cls(time, event, X, tuple(feature_names))

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def n_coef(self) -> int:
        return self.X.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return SurvivalDataset(self.time[index], self.event[index], self.X[index], self.feature_names)

    def drop(self, rows):
        """Return a copy without the given (0-based) rows."""
        keep = np.setdiff1d(np.arange(self.n), np.asarray(list(rows), dtype=int))
        return self.subset(keep)

    @staticmethod
    def concat(*parts):
        return SurvivalDataset(
            np.concatenate([p.time for p in parts]),
            np.concatenate([p.event for p in parts]),
            np.vstack([p.X for p in parts]),
            parts[0].feature_names,
        )


@dataclass(frozen=True)
class ParamVector:
    """Constrained parameters ``(beta, alpha, psi)`` with ``alpha < 0``, ``psi > 0``."""

    beta: np.ndarray
    alpha: float
    psi: float = 1.0

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if not self.alpha < 0:
            raise ValueError("alpha must be strictly negative")
        if not self.psi > 0:
            raise ValueError("psi must be strictly positive")
        object.__setattr__(self, "beta", beta)

    def to_unconstrained(self, fixed_psi=False):
        extra = [np.log(-self.alpha)] if fixed_psi else [np.log(-self.alpha), np.log(self.psi)]
        return np.concatenate([self.beta, extra])

    @classmethod
    def from_unconstrained(cls, u, fixed_psi=False):
        u = np.asarray(u, dtype=float)
        if fixed_psi:
            return cls(u[:-1], -np.exp(u[-1]), 1.0)
        return cls(u[:-2], -np.exp(u[-2]), np.exp(u[-1]))

    def to_array(self, fixed_psi=False):
        tail = [self.alpha] if fixed_psi else [self.alpha, self.psi]
        return np.concatenate([self.beta, tail])


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors on the model parameters.

    ``beta_k ~ Normal(beta_mean_k, beta_sd_k**2)``, ``alpha ~ Normal(alpha_mean,
    alpha_sd**2)`` and ``psi ~ Gamma(psi_shape, rate=psi_rate)``.  The Weibull
    mixture baseline uses the same ``beta`` priors plus Gamma priors on its
    shape and rate.  Scalars for ``beta_mean``/``beta_sd`` apply to every
    coefficient.
    """

    beta_mean: object = 0.0
    beta_sd: object = 10.0
    alpha_mean: float = 0.0
    alpha_sd: float = 10.0
    psi_shape: float = 0.01
    psi_rate: float = 0.01
    weibull_shape_shape: float = 0.01
    weibull_shape_rate: float = 0.01
    weibull_rate_shape: float = 0.01
    weibull_rate_rate: float = 0.01

    def __post_init__(self):
        for name in (
            "alpha_sd",
            "psi_shape",
            "psi_rate",
            "weibull_shape_shape",
            "weibull_shape_rate",
            "weibull_rate_shape",
            "weibull_rate_rate",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if np.any(np.asarray(self.beta_sd, dtype=float) <= 0):
            raise ValueError("beta_sd must be strictly positive")

    def beta_moments(self, n_coef):
        mean = np.broadcast_to(np.asarray(self.beta_mean, dtype=float), (n_coef,))
        sd = np.broadcast_to(np.asarray(self.beta_sd, dtype=float), (n_coef,))
        return mean, sd


def normal_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI


def gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def cure_probability(beta, x):
    """Logistic cure probability ``1 / (1 + exp(-x' beta))``.

    The linear predictor is clipped to ``[-ETA_CLIP, ETA_CLIP]`` so the result
    never reaches exactly 0 or 1.
    """
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != beta.shape[-1]:
        raise ValueError(f"covariate length {x.shape[-1]} does not match {beta.shape[-1]} coefficients")
    return expit(np.clip(x @ beta, -ETA_CLIP, ETA_CLIP))


def _obs_terms(time, event, eta, alpha, psi, fixed_psi, grad):
    """Per-observation log-likelihood and partials w.r.t. (eta, a, s).

    ``alpha`` and ``psi`` may be scalars or arrays broadcastable against the
    observations (the latter is used for draw-by-observation matrices).
    """
    inside = np.abs(eta) < ETA_CLIP
    eta = np.clip(eta, -ETA_CLIP, ETA_CLIP)
    log1mp = -np.logaddexp(0.0, eta)
    w = log1mp / psi
    L = log1mexp(w)
    em1 = np.expm1(alpha * time)
    g = -em1
    x = L * g  # log S0
    u = log1mexp(x)  # log F0
    logf0 = np.log(-alpha) + np.log(-L) + alpha * time + x
    if fixed_psi:
        logS = x
        logf = logf0
    else:
        logS = log1mexp(psi * u)
        logf = np.log(psi) + logf0 + (psi - 1.0) * u
    ll = np.where(event == 1, logf, logS)
    if not grad:
        return ll, None

    dg_dalpha = -time * (em1 + 1.0)
    dL_dw = -1.0 / np.expm1(-w)
    if fixed_psi:
        dL = np.where(event == 1, 1.0 / L + g, g)
        dalpha = np.where(event == 1, 1.0 / alpha + time + L * dg_dalpha, L * dg_dalpha)
        dpsi = None
    else:
        u_x = -1.0 / np.expm1(-x)
        v_x = -1.0 / np.expm1(-psi * u)
        cens = v_x * psi * u_x
        dL = np.where(event == 1, 1.0 / L + g + (psi - 1.0) * u_x * g, cens * g)
        dalpha = np.where(
            event == 1,
            1.0 / alpha + time + L * (1.0 + (psi - 1.0) * u_x) * dg_dalpha,
            cens * L * dg_dalpha,
        )
        dpsi = np.where(event == 1, 1.0 / psi + u, v_x * u)
    dLw = dL * dL_dw
    p = expit(eta)
    d_eta = np.where(inside, dLw * (-p / psi), 0.0)
    d_a = dalpha * alpha
    d_s = None if fixed_psi else dpsi * psi - dLw * w
    return ll, (d_eta, d_a, d_s)


class DGGDCureModel:
    """Log posterior of the defective generalized Gompertz cure regression.

    Parameters
    ----------
    data : SurvivalDataset
    priors : PriorSpec, optional
        Defaults to vague priors.
    family : {"dggd", "gompertz"}
        ``"gompertz"`` pins ``psi = 1``.
    likelihood_weight : float
        Multiplier on the log-likelihood; 0 gives the prior-only model.
    backend : {"numba", "numpy"}, optional
        Implementation of the likelihood gradient loop.  Defaults to the
        compiled kernel when numba is importable.
    """

    families = ("dggd", "gompertz")

    def __init__(self, data, priors=None, family="dggd", likelihood_weight=1.0, backend=None):
        if family not in self.families:
            raise ValueError(f"unknown family {family!r}; expected one of {self.families}")
        if backend is None:
            backend = "numba" if _kernels is not None else "numpy"
        if backend not in ("numba", "numpy") or (backend == "numba" and _kernels is None):
            raise ValueError(f"backend {backend!r} is not available")
        self.backend = backend
        self.data = data
        self.priors = priors if priors is not None else PriorSpec()
        self.family = family
        self.fixed_psi = family == "gompertz"
        self.likelihood_weight = float(likelihood_weight)
        self._beta_mean, self._beta_sd = self.priors.beta_moments(data.n_coef)

    # parameter bookkeeping -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.data.n_coef + (1 if self.fixed_psi else 2)

    @property
    def param_names(self):
        names = [f"beta{j}" for j in range(self.data.n_coef)] + ["alpha"]
        return names if self.fixed_psi else names + ["psi"]

    def constrain(self, u):
        """Map unconstrained rows ``(beta, a[, s])`` to ``(beta, alpha[, psi])``."""
        u = np.asarray(u, dtype=float)
        out = u.copy()
        k = self.data.n_coef
        out[..., k] = -np.exp(u[..., k])
        if not self.fixed_psi:
            out[..., k + 1] = np.exp(u[..., k + 1])
        return out

    def unconstrain(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        k = self.data.n_coef
        out[..., k] = np.log(-theta[..., k])
        if not self.fixed_psi:
            out[..., k + 1] = np.log(theta[..., k + 1])
        return out

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = self.data.n_coef
        psi = 1.0 if self.fixed_psi else theta[..., k + 1]
        return theta[..., :k], theta[..., k], psi

    def to_param_vector(self, theta):
        beta, alpha, psi = self._split(theta)
        return ParamVector(beta, float(alpha), float(psi))

    # densities ---------------------------------------------------------------

    def pointwise_loglik(self, theta):
        """Matrix ``L[s, i]`` of per-observation log-likelihoods.

        ``theta`` holds constrained parameter rows; a single row gives a
        vector of length ``n``.
        """
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        theta = np.atleast_2d(theta)
        beta, alpha, psi = self._split(theta)
        eta = beta @ self.data.X.T
        psi_col = psi if self.fixed_psi else psi[:, None]
        with np.errstate(all="ignore"):
            ll, _ = _obs_terms(self.data.time, self.data.event, eta, alpha[:, None], psi_col, self.fixed_psi, False)
        return ll[0] if single else ll

    def log_likelihood(self, theta):
        if self.data.n == 0:
            return 0.0
        return float(np.sum(self.pointwise_loglik(theta)))

    def log_survival(self, theta, time=None, X=None):
        """Population log survival ``log S(t_i)`` for each observation (rows per draw)."""
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        beta, alpha, psi = self._split(np.atleast_2d(theta))
        X = self.data.X if X is None else np.asarray(X, dtype=float)
        time = self.data.time if time is None else np.asarray(time, dtype=float)
        p = expit(np.clip(beta @ X.T, -ETA_CLIP, ETA_CLIP))
        psi_col = psi if self.fixed_psi else psi[:, None]
        out = dggd_cure_logsf(time, alpha[:, None], p, psi_col)
        return out[0] if single else out

    def log_prior(self, theta):
        beta, alpha, psi = self._split(theta)
        pr = self.priors
        lp = np.sum(normal_logpdf(beta, self._beta_mean, self._beta_sd))
        lp += normal_logpdf(alpha, pr.alpha_mean, pr.alpha_sd)
        if not self.fixed_psi:
            lp += gamma_logpdf(psi, pr.psi_shape, pr.psi_rate)
        return float(lp)

    def log_posterior(self, theta):
        """Constrained-space log posterior (no Jacobian)."""
        return self.likelihood_weight * self.log_likelihood(theta) + self.log_prior(theta)

    def logp_and_grad(self, u):
        """Unconstrained log posterior (with log-Jacobian) and its gradient."""
        u = np.asarray(u, dtype=float)
        k = self.data.n_coef
        beta = u[:k]
        a = u[k]
        with np.errstate(over="ignore"):
            alpha = -np.exp(a)
            if self.fixed_psi:
                s, psi = 0.0, 1.0
            else:
                s = u[k + 1]
                psi = np.exp(s)
        pr = self.priors
        grad = np.empty_like(u)

        lw = self.likelihood_weight
        data = self.data
        if data.n and lw != 0.0:
            if self.backend == "numba":
                gb = np.empty(k)
                ll, d_a, d_s = _kernels.dggd_loglik_grad(
                    data.time, data.event, data.X, beta, alpha, psi, self.fixed_psi, ETA_CLIP, gb
                )
                lp = lw * ll
                grad[:k] = lw * gb
            else:
                with np.errstate(all="ignore"):
                    terms, (d_eta, d_a, d_s) = _obs_terms(
                        data.time, data.event, data.X @ beta, alpha, psi, self.fixed_psi, True
                    )
                lp = lw * terms.sum()
                grad[:k] = lw * (d_eta @ data.X)
                d_a, d_s = d_a.sum(), (0.0 if d_s is None else d_s.sum())
            grad[k] = lw * d_a
            if not self.fixed_psi:
                grad[k + 1] = lw * d_s
        else:
            lp = 0.0
            grad[:] = 0.0

        z = (beta - self._beta_mean) / self._beta_sd
        lp += np.sum(-0.5 * z * z - np.log(self._beta_sd)) - 0.5 * k * _LOG_2PI
        grad[:k] -= z / self._beta_sd

        with np.errstate(all="ignore"):
            za = (alpha - pr.alpha_mean) / pr.alpha_sd
            lp += -0.5 * za * za - np.log(pr.alpha_sd) - 0.5 * _LOG_2PI + a
            grad[k] += -za / pr.alpha_sd * alpha + 1.0
            if not self.fixed_psi:
                lp += gamma_logpdf(psi, pr.psi_shape, pr.psi_rate) + s
                grad[k + 1] += pr.psi_shape - pr.psi_rate * psi
        if not np.isfinite(lp):
            return -np.inf, grad
        return float(lp), grad

    def log_posterior_unconstrained(self, u):
        return self.logp_and_grad(u)[0]

    def grad_log_posterior_unconstrained(self, u):
        return self.logp_and_grad(u)[1]

    def cure_probability(self, theta, X=None):
        beta, _, _ = self._split(theta)
        return cure_probability(beta, self.data.X if X is None else X)


# Functional surface -----------------------------------------------------------


def _theta_array(theta: ParamVector, fixed_psi):
    return theta.to_array(fixed_psi=fixed_psi)


def log_likelihood(theta: ParamVector, data: SurvivalDataset, family="dggd"):
    """Right-censored log-likelihood ``sum_i d_i log f(t_i) + (1 - d_i) log S(t_i)``."""
    model = DGGDCureModel(data, family=family)
    return model.log_likelihood(_theta_array(theta, model.fixed_psi))


def log_prior(theta: ParamVector, priors: PriorSpec, family="dggd"):
    """Sum of the independent Normal/Normal/Gamma prior log-densities."""
    k = theta.beta.shape[0]
    empty = SurvivalDataset(np.empty(0), np.empty(0), np.ones((0, k)))
    model = DGGDCureModel(empty, priors, family)
    return model.log_prior(_theta_array(theta, model.fixed_psi))


def log_posterior_unconstrained(u, data, priors=None, family="dggd"):
    return DGGDCureModel(data, priors, family).log_posterior_unconstrained(u)


def grad_log_posterior_unconstrained(u, data, priors=None, family="dggd"):
    return DGGDCureModel(data, priors, family).grad_log_posterior_unconstrained(u)
