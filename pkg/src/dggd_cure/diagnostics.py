"""Residuals and Bayesian model-comparison criteria.

Everything here works from a fitted model object (anything exposing
``pointwise_loglik`` and ``log_survival`` over constrained parameter rows)
and a :class:`~dggd_cure.sampler.PosteriorDraws`, or directly from a
pointwise log-likelihood matrix ``L[s, i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .sampler import PosteriorDraws

__all__ = [
    "martingale_residuals",
    "deviance_residuals",
    "residuals",
    "pointwise_loglik",
    "cpo",
    "lpml",
    "DicResult",
    "dic",
    "GpdFit",
    "fit_gpd_tail",
    "gpd_quantile",
    "psis_smooth",
    "PsisResult",
    "psis_loo",
    "k_tier",
    "flag_observations",
    "K_TIERS",
]

#: Upper edges of the Pareto-k reliability tiers.
K_TIERS = (("ok", 0.5), ("fair", 0.7), ("bad", 1.0), ("very bad", np.inf))

OUTLIER_THRESHOLD = 3.0
INFLUENCE_THRESHOLD = 0.7


def _constrained(draws):
    if isinstance(draws, PosteriorDraws):
        return draws.flat()
    return np.atleast_2d(np.asarray(draws, dtype=float))


# Residuals -------------------------------------------------------------------


def martingale_residuals(event, log_survival):
    """``r_M = delta + log S(t)``; bounded above by 1."""
    return np.asarray(event, dtype=float) + np.asarray(log_survival, dtype=float)


def deviance_residuals(r_m, event, atol=1e-12):
    """Variance-stabilising transform of martingale residuals.

    ``sign(r_M) * sqrt(-2 [r_M + delta log(delta - r_M)])``, with the
    ``delta = 0`` term taken as 0.  Round-off negatives down to ``-atol`` are
    clamped; anything lower raises ``ValueError``.
    """
    r_m = np.asarray(r_m, dtype=float)
    event = np.broadcast_to(np.asarray(event, dtype=float), r_m.shape)
    if np.any(r_m > 1.0 + atol):
        raise ValueError("martingale residuals cannot exceed 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.where(event > 0, event * np.log(np.maximum(event - r_m, 0.0)), 0.0)
    arg = -2.0 * (r_m + log_term)
    if np.any(arg < -atol):
        bad = np.unravel_index(np.argmin(arg), arg.shape)
        raise ValueError(f"negative deviance term {arg[bad]:.3g} at observation {bad[0] if bad else 0}")
    return np.sign(r_m) * np.sqrt(np.maximum(arg, 0.0))


def residuals(model, draws, averaged=False):
    """Martingale and deviance residuals for every observation.

    By default log-survival is evaluated at the posterior mean of the
    constrained parameters.  ``averaged=True`` averages ``log S(t_i)`` over
    draws instead.

    Returns
    -------
    pandas.DataFrame
        Columns ``index, time, event, r_M, r_D``.
    """
    theta = _constrained(draws)
    if averaged:
        log_s = model.log_survival(theta).mean(axis=0)
    else:
        log_s = model.log_survival(theta.mean(axis=0))
    data = model.data
    r_m = martingale_residuals(data.event, log_s)
    r_d = deviance_residuals(r_m, data.event)
    return pd.DataFrame(
        {"index": np.arange(data.n), "time": data.time, "event": data.event, "r_M": r_m, "r_D": r_d}
    )


# Pointwise likelihood, CPO, LPML ---------------------------------------------


def pointwise_loglik(model, draws):
    """Matrix ``L[s, i] = log p(y_i | theta_s)``; non-finite entries raise."""
    L = np.atleast_2d(model.pointwise_loglik(_constrained(draws)))
    bad = ~np.isfinite(L)
    if bad.any():
        s, i = np.argwhere(bad)[0]
        raise ValueError(f"non-finite log-likelihood at draw {s}, observation {i}")
    return L


def cpo(L):
    """Conditional predictive ordinates as posterior harmonic means.

    Uses ``log CPO_i = log S + l_min - log sum_s exp(l_min - l_{s,i})`` where
    ``l_min`` is the smallest log-likelihood of observation ``i``; every
    exponent is then non-positive.

    Returns
    -------
    cpo, log_cpo : ndarray of shape (n,)
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    S = L.shape[0]
    if S < 2:
        raise ValueError("at least two draws are required")
    l_min = L.min(axis=0)
    log_cpo = np.log(S) + l_min - np.log(np.sum(np.exp(l_min - L), axis=0))
    return np.exp(log_cpo), log_cpo


def lpml(log_cpo):
    """Log pseudo-marginal likelihood ``sum_i log CPO_i`` (0 for no observations)."""
    return float(np.sum(log_cpo))


# DIC ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DicResult:
    """``dic`` is ``D_bar + p_D / 2``; ``dic_standard`` is ``D_bar + p_D``."""

    dic: float
    dic_standard: float
    p_d: float
    d_bar: float
    d_at_mean: float


def dic(model, draws):
    """Deviance information criterion from posterior draws.

    ``D(theta) = -2 log L(theta)``; ``D_bar`` averages over draws and
    ``D(theta_bar)`` uses the mean of the constrained draws.
    """
    theta = _constrained(draws)
    if theta.shape[0] < 2:
        raise ValueError("at least two draws are required")
    dev = -2.0 * np.atleast_2d(model.pointwise_loglik(theta)).sum(axis=1)
    d_bar = float(dev.mean())
    d_hat = float(-2.0 * np.sum(model.pointwise_loglik(theta.mean(axis=0))))
    p_d = d_bar - d_hat
    return DicResult(d_bar + 0.5 * p_d, d_bar + p_d, p_d, d_bar, d_hat)


# Generalized Pareto tail fit ---------------------------------------------------


@dataclass(frozen=True)
class GpdFit:
    """Generalized Pareto shape ``k`` and scale ``sigma`` (location at the threshold)."""

    k: float
    sigma: float
    degenerate: bool = False


def fit_gpd_tail(x, prior_k=10.0, prior_bs=3.0):
    """Empirical-Bayes fit of a generalized Pareto distribution.

    Profile-posterior quadrature over the reparametrised scale
    ``b = -k / sigma`` on a deterministic grid, followed by shrinkage of the
    shape toward 0.5 with weight ``prior_k``: ``k <- (M k + 5) / (M + 10)``
    for the default.

    Parameters
    ----------
    x : array of exceedances over the threshold (non-negative)

    Returns
    -------
    GpdFit
        ``degenerate=True`` (and NaN estimates) when the tail has no spread.
    """
    x = np.sort(np.asarray(x, dtype=float))
    M = x.size
    if M < 5:
        raise ValueError("the tail needs at least five points")
    if np.any(x < 0):
        raise ValueError("exceedances must be non-negative")
    if x[-1] <= 0 or np.ptp(x) <= 1e-12 * x[-1]:
        return GpdFit(np.nan, np.nan, True)

    m = 30 + int(np.sqrt(M))
    grid = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    grid /= prior_bs * x[int(M / 4 + 0.5) - 1]
    grid += 1.0 / x[-1]
    k_grid = np.log1p(-grid[:, None] * x).mean(axis=1)
    log_lik = M * (np.log(-grid / k_grid) - k_grid - 1.0)
    weights = np.exp(log_lik - logsumexp(log_lik))
    keep = weights >= 10 * np.finfo(float).eps
    weights = weights[keep] / weights[keep].sum()
    b_post = float(np.sum(grid[keep] * weights))
    k = float(np.log1p(-b_post * x).mean())
    sigma = -k / b_post
    k = (M * k + prior_k * 0.5) / (M + prior_k)
    return GpdFit(k, sigma)


def gpd_quantile(p, k, sigma):
    """Inverse CDF of the generalized Pareto distribution at location 0."""
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


# PSIS ---------------------------------------------------------------------------


def psis_smooth(log_ratios, tail_fraction=0.2):
    """Pareto-smooth and truncate importance log-weights.

    The ``M = ceil(tail_fraction * S)`` largest ratios are replaced by
    generalized-Pareto expected order statistics at ``(z - 1/2) / M`` above
    the largest non-tail ratio (never exceeding the largest raw ratio).  All
    weights are then capped at ``S**(3/4)`` times their mean.

    Returns
    -------
    log_weights : ndarray
        Normalised smoothed log-weights (summing to one on the natural scale).
    k : float
        Pareto shape estimate; NaN when the tail is degenerate.
    """
    lw, fit = _smooth_tail(log_ratios, tail_fraction)
    S = lw.size
    log_cap = 0.75 * np.log(S) + logsumexp(lw) - np.log(S)
    lw = np.minimum(lw, log_cap)
    lw -= logsumexp(lw)
    return lw, fit.k


def _smooth_tail(log_ratios, tail_fraction=0.2):
    """Tail replacement step of :func:`psis_smooth`, before truncation."""
    lw = np.array(log_ratios, dtype=float)
    S = lw.size
    M = ceil(tail_fraction * S)
    if M < 5 or M >= S:
        raise ValueError(f"need at least {ceil(5 / tail_fraction)} draws for smoothing, got {S}")
    lw -= lw.max()
    order = np.argsort(lw, kind="stable")
    tail = order[-M:]
    log_cut = lw[order[-M - 1]]
    exceed = np.exp(lw[tail]) - np.exp(log_cut)
    fit = fit_gpd_tail(exceed)
    if not fit.degenerate:
        z = np.arange(1, M + 1)
        smoothed = np.log(gpd_quantile((z - 0.5) / M, fit.k, fit.sigma) + np.exp(log_cut))
        lw[tail] = np.minimum(smoothed, 0.0)
    return lw, fit


def k_tier(k):
    """Reliability label of a Pareto shape estimate (``"n/a"`` for NaN)."""
    if not np.isfinite(k):
        return "n/a"
    for name, edge in K_TIERS:
        if k < edge:
            return name
    return "very bad"


@dataclass
class PsisResult:
    log_weights: np.ndarray
    pareto_k: np.ndarray
    elpd_i: np.ndarray
    tiers: list = field(default_factory=list)

    @property
    def elpd(self):
        return float(np.sum(self.elpd_i))

    @property
    def looic(self):
        """``-2 * elpd``, the deviance scale."""
        return -2.0 * self.elpd

    def tier_counts(self):
        names = [t for t, _ in K_TIERS] + ["n/a"]
        return {name: int(sum(t == name for t in self.tiers)) for name in names}


def psis_loo(L):
    """PSIS leave-one-out expected log predictive density.

    Raw log-ratios are ``-L[:, i]``; ``elpd_i = log(sum_s w_s p_s / sum_s w_s)``
    with the smoothed weights.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    S, n = L.shape
    log_w = np.empty_like(L)
    ks = np.empty(n)
    for i in range(n):
        log_w[:, i], ks[i] = psis_smooth(-L[:, i])
    elpd_i = logsumexp(log_w + L, axis=0)
    return PsisResult(log_w, ks, elpd_i, [k_tier(k) for k in ks])


def flag_observations(r_d, pareto_k):
    """Observations with ``|r_D| > 3`` (outlier) or ``k > 0.7`` (influential).

    Both comparisons are strict.  Returns a frame with ``index, reason``.
    """
    r_d = np.asarray(r_d, dtype=float)
    pareto_k = np.asarray(pareto_k, dtype=float)
    rows = []
    for i in range(r_d.size):
        reasons = []
        if abs(r_d[i]) > OUTLIER_THRESHOLD:
            reasons.append("outlier")
        if np.isfinite(pareto_k[i]) and pareto_k[i] > INFLUENCE_THRESHOLD:
            reasons.append("influential")
        if reasons:
            rows.append((i, "+".join(reasons)))
    return pd.DataFrame(rows, columns=["index", "reason"])
