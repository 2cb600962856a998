"""Fused per-observation likelihood and gradient loops.

These are the sampler's hot path.  They mirror the vectorized numpy
implementations in :mod:`dggd_cure.regression` and
:mod:`dggd_cure.mixture`, which remain the reference (the test-suite checks
the two against each other).
"""

from math import exp, expm1, log, log1p

import numpy as np
from numba import njit

__all__ = ["dggd_loglik_grad", "mixture_loglik_grad", "warmup"]

LOG2 = log(2.0)


@njit(cache=True, inline="always", error_model="numpy")
def _log1mexp(x):
    if x > -LOG2:
        return log(-expm1(x))
    return log1p(-exp(x))


@njit(cache=True, inline="always", error_model="numpy")
def _link(eta, clip):
    """Clipped linear predictor -> (p, log p, log(1 - p), inside clip)."""
    inside = abs(eta) < clip
    if eta > clip:
        eta = clip
    elif eta < -clip:
        eta = -clip
    if eta > 0:
        z = exp(-eta)
        lz = log1p(z)
        return 1.0 / (1.0 + z), -lz, -eta - lz, inside
    z = exp(eta)
    lz = log1p(z)
    return z / (1.0 + z), eta - lz, -lz, inside


@njit(cache=True, error_model="numpy")
def dggd_loglik_grad(time, event, X, beta, alpha, psi, fixed_psi, clip, grad_beta):
    """Sum of log-likelihood terms; fills ``grad_beta`` and returns (ll, d_a, d_s)."""
    n, k = X.shape
    for j in range(k):
        grad_beta[j] = 0.0
    ll_sum = 0.0
    da_sum = 0.0
    ds_sum = 0.0
    log_ma = log(-alpha)
    log_psi = log(psi)
    for i in range(n):
        eta = 0.0
        for j in range(k):
            eta += X[i, j] * beta[j]
        p, _, log1mp, inside = _link(eta, clip)
        w = log1mp / psi
        em1w = expm1(w)
        L = log(-em1w) if w > -LOG2 else log1p(-exp(w))
        dL_dw = -1.0 / expm1(-w)
        t = time[i]
        em1 = expm1(alpha * t)
        g = -em1
        dgda = -t * (em1 + 1.0)
        x = L * g
        if fixed_psi:
            if event[i] == 1:
                ll = log_ma + log(-L) + alpha * t + x
                dL = 1.0 / L + g
                dal = 1.0 / alpha + t + L * dgda
            else:
                ll = x
                dL = g
                dal = L * dgda
            dps = 0.0
        else:
            u = _log1mexp(x)
            u_x = -1.0 / expm1(-x)
            if event[i] == 1:
                ll = log_psi + log_ma + log(-L) + alpha * t + x + (psi - 1.0) * u
                dL = 1.0 / L + g + (psi - 1.0) * u_x * g
                dal = 1.0 / alpha + t + L * (1.0 + (psi - 1.0) * u_x) * dgda
                dps = 1.0 / psi + u
            else:
                ll = _log1mexp(psi * u)
                v_x = -1.0 / expm1(-psi * u)
                cens = v_x * psi * u_x
                dL = cens * g
                dal = cens * L * dgda
                dps = v_x * u
        ll_sum += ll
        dLw = dL * dL_dw
        if inside:
            d_eta = -dLw * p / psi
            for j in range(k):
                grad_beta[j] += d_eta * X[i, j]
        da_sum += dal * alpha
        ds_sum += dps * psi - dLw * w
    return ll_sum, da_sum, ds_sum


@njit(cache=True, error_model="numpy")
def mixture_loglik_grad(time, event, X, beta, shape, rate, clip, grad_beta):
    """Weibull mixture cure model; returns (ll, d log shape, d log rate)."""
    n, k = X.shape
    for j in range(k):
        grad_beta[j] = 0.0
    ll_sum = 0.0
    da_sum = 0.0
    db_sum = 0.0
    log_shape = log(shape)
    log_rate = log(rate)
    for i in range(n):
        eta = 0.0
        for j in range(k):
            eta += X[i, j] * beta[j]
        p, logp, log1mp, inside = _link(eta, clip)
        t = time[i]
        z = log_rate + log(t)
        h = exp(shape * z)  # cumulative hazard (rate t)^shape
        if event[i] == 1:
            ll = log1mp + log_shape + log_rate + (shape - 1.0) * z - h
            d_eta = -p
            da = 1.0 + shape * z - shape * z * h
            db = shape - shape * h
        else:
            # log(p + (1 - p) exp(-h))
            a1 = logp
            a2 = log1mp - h
            m = a1 if a1 > a2 else a2
            ll = m + log(exp(a1 - m) + exp(a2 - m))
            r = exp(a2 - ll)  # susceptible share of the population survival
            d_eta = p * (1.0 - p) * (1.0 - exp(-h)) / exp(ll)
            da = -r * h * shape * z
            db = -r * h * shape
        ll_sum += ll
        if inside:
            for j in range(k):
                grad_beta[j] += d_eta * X[i, j]
        da_sum += da
        db_sum += db
    return ll_sum, da_sum, db_sum


def warmup():
    """Trigger compilation on tiny inputs."""
    t = np.array([0.5, 1.0])
    e = np.array([1, 0], dtype=np.int64)
    X = np.ones((2, 1))
    g = np.zeros(1)
    dggd_loglik_grad(t, e, X, np.zeros(1), -1.0, 1.5, False, 35.0, g)
    mixture_loglik_grad(t, e, X, np.zeros(1), 1.0, 1.0, 35.0, g)


