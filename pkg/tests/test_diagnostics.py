import mpmath
import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from dggd_cure.diagnostics import (
    DicResult,
    cpo,
    deviance_residuals,
    dic,
    fit_gpd_tail,
    flag_observations,
    gpd_quantile,
    k_tier,
    lpml,
    martingale_residuals,
    _smooth_tail,
    pointwise_loglik,
    psis_loo,
    psis_smooth,
    residuals,
)
from dggd_cure.regression import DGGDCureModel

from conftest import random_dataset

mpmath.mp.dps = 50


# residuals ---------------------------------------------------------------------


def test_martingale_examples():
    assert martingale_residuals(0, 0.0) == 0.0
    assert martingale_residuals(1, 0.0) == 1.0
    assert martingale_residuals(1, -1.0) == 0.0


def test_deviance_examples():
    assert deviance_residuals(0.0, 0) == 0.0
    assert deviance_residuals(0.0, 1) == 0.0
    assert deviance_residuals(-1.0, 0) == pytest.approx(-np.sqrt(2.0), rel=1e-15)


def test_deviance_zero_iff_martingale_zero_and_sign():
    rm = np.concatenate([np.linspace(-5, 0.99, 300), [0.0]])
    for d in (0, 1):
        if d == 0:
            grid = rm[rm <= 0]
        else:
            grid = rm
        rd = deviance_residuals(grid, np.full(grid.size, d))
        assert np.array_equal(rd == 0, grid == 0)
        assert np.all(np.sign(rd) == np.sign(grid))


def test_deviance_monotone_in_abs_martingale():
    for d in (0, 1):
        neg = np.linspace(-8, 0, 200)
        a = np.abs(deviance_residuals(neg, np.full(neg.size, d)))
        assert np.all(np.diff(a[::-1]) >= 0)
    pos = np.linspace(0, 0.999, 200)
    assert np.all(np.diff(deviance_residuals(pos, np.ones(pos.size))) >= 0)


def test_deviance_rejects_invalid_arguments():
    with pytest.raises(ValueError):
        deviance_residuals(1.5, 1)
    with pytest.raises(ValueError):
        deviance_residuals(0.5, 0)  # censored residuals are never positive


def test_residual_frame_bounded(rng):
    data = random_dataset(rng, 50)
    model = DGGDCureModel(data)
    theta = model.constrain(rng.normal(scale=0.3, size=(20, model.dim)))
    for averaged in (False, True):
        res = residuals(model, theta, averaged=averaged)
        assert list(res.columns) == ["index", "time", "event", "r_M", "r_D"]
        assert np.all(res["r_M"] <= 1.0)


# pointwise likelihood / CPO / LPML ------------------------------------------


def test_pointwise_loglik_rows_sum_to_loglik(rng):
    model = DGGDCureModel(random_dataset(rng, 3))
    theta = model.constrain(rng.normal(size=(5, model.dim)))
    L = pointwise_loglik(model, theta)
    assert L.shape == (5, 3)
    for s in range(5):
        assert L[s].sum() == pytest.approx(model.log_likelihood(theta[s]))
    twin = pointwise_loglik(model, np.vstack([theta[0], theta[0]]))
    assert np.array_equal(twin[0], twin[1])


def test_pointwise_loglik_names_bad_entry():
    class Broken:
        def pointwise_loglik(self, theta):
            L = np.zeros((3, 4))
            L[1, 2] = np.nan
            return L

    with pytest.raises(ValueError, match="draw 1, observation 2"):
        pointwise_loglik(Broken(), np.zeros((3, 2)))


def test_cpo_examples():
    c, lc = cpo(np.log([[1.0], [3.0]]))
    assert c[0] == pytest.approx(1.5, rel=1e-14)
    c, _ = cpo(np.full((7, 2), -1.3))
    np.testing.assert_allclose(c, np.exp(-1.3), rtol=1e-14)


def naive_log_cpo(L):
    out = []
    for col in L.T:
        s = mpmath.fsum(mpmath.exp(-mpmath.mpf(float(v))) for v in col)
        out.append(float(mpmath.log(len(col)) - mpmath.log(s)))
    return np.array(out)


def test_cpo_matches_extended_precision_oracle():
    rng = np.random.default_rng(8)
    for _ in range(100):
        S, n = rng.integers(2, 51), rng.integers(1, 11)
        L = rng.normal(-2.0, 3.0, size=(S, n))
        _, lc = cpo(L)
        np.testing.assert_allclose(lc, naive_log_cpo(L), rtol=1e-12, atol=1e-12)


def test_lpml_basics_and_additivity(rng):
    assert lpml([]) == 0.0
    assert lpml([-1.7]) == -1.7
    L = rng.normal(size=(30, 8))
    whole = lpml(cpo(L)[1])
    parts = lpml(cpo(L[:, :3])[1]) + lpml(cpo(L[:, 3:])[1])
    assert whole == pytest.approx(parts, rel=1e-13)


# DIC ------------------------------------------------------------------------


class ToyModel:
    """Normal observations with unknown mean and unit variance."""

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)

    def pointwise_loglik(self, theta):
        theta = np.asarray(theta, dtype=float)
        mu = theta[..., 0:1]
        return stats.norm.logpdf(self.y, loc=mu, scale=1.0)


def test_dic_degenerate_posterior():
    model = ToyModel([0.1, -0.4, 1.2])
    res = dic(model, np.full((10, 1), 0.3))
    assert res.p_d == pytest.approx(0.0, abs=1e-12)
    assert res.dic == pytest.approx(res.d_bar) and res.dic_standard == pytest.approx(res.d_bar)


def test_dic_two_draw_hand_computation():
    y = np.array([0.0, 1.0])
    model = ToyModel(y)
    draws = np.array([[0.0], [1.0]])
    dev = lambda m: -2 * np.sum(-0.5 * np.log(2 * np.pi) - 0.5 * (y - m) ** 2)  # noqa: E731
    d_bar = 0.5 * (dev(0.0) + dev(1.0))
    p_d = d_bar - dev(0.5)
    res = dic(model, draws)
    assert isinstance(res, DicResult)
    assert res.d_bar == pytest.approx(d_bar)
    assert res.p_d == pytest.approx(p_d)
    assert res.dic == pytest.approx(d_bar + p_d / 2)
    assert res.dic_standard - res.dic == pytest.approx(res.p_d / 2)


# GPD ---------------------------------------------------------------------------


@pytest.mark.parametrize("k", [0.0, 0.5])
def test_gpd_recovery(k):
    x = stats.genpareto.rvs(c=k, scale=1.0, size=2000, random_state=np.random.default_rng(12))
    fit = fit_gpd_tail(x)
    assert abs(fit.k - k) < 0.1
    assert fit.sigma > 0


def test_gpd_degenerate_tail():
    fit = fit_gpd_tail(np.full(20, 0.7))
    assert fit.degenerate and np.isnan(fit.k)


def test_gpd_quantile_matches_scipy():
    p = np.linspace(0.01, 0.99, 50)
    for k in (-0.3, 0.0, 0.4):
        np.testing.assert_allclose(gpd_quantile(p, k, 1.7), stats.genpareto.ppf(p, c=k, scale=1.7), rtol=1e-12)


# PSIS -------------------------------------------------------------------------


def test_psis_constant_ratios_inert():
    lw, k = psis_smooth(np.zeros(100))
    np.testing.assert_allclose(lw, -np.log(100), rtol=1e-15)
    assert np.isnan(k)


def test_psis_truncation_cap():
    rng = np.random.default_rng(13)
    raw = rng.normal(size=400)
    raw[17] = raw.max() + np.log(1e6)
    S = raw.size
    smoothed, _ = _smooth_tail(raw)
    lw, _ = psis_smooth(raw)
    # compare on the scale of the smoothed (pre-truncation) weights
    w = np.exp(lw + logsumexp(np.minimum(smoothed, 0.75 * np.log(S) + logsumexp(smoothed) - np.log(S))))
    cap = S**0.75 * np.exp(smoothed).mean()
    assert w.max() <= cap * (1 + 1e-12)
    assert w.max() == pytest.approx(cap, rel=1e-12)
    assert np.exp(lw).sum() == pytest.approx(1.0)


def test_psis_reduces_estimator_variance():
    rng = np.random.default_rng(14)
    scale = 1.6  # target N(0, 1.6^2) sampled from N(0, 1): heavy importance tail
    raw_est, ps_est = [], []
    for _ in range(200):
        x = rng.standard_normal(500)
        lr = stats.norm.logpdf(x, scale=scale) - stats.norm.logpdf(x)
        w = np.exp(lr - logsumexp(lr))
        raw_est.append(np.sum(w * x**2))
        lw, _ = psis_smooth(lr)
        ps_est.append(np.sum(np.exp(lw) * x**2))
    assert np.var(ps_est) < np.var(raw_est)


@pytest.mark.xfail(strict=True, reason="tail replacement moves bounded ratios by ~1e-5, above the 1e-6 target")
def test_psis_bounded_ratios_close_to_raw():
    rng = np.random.default_rng(15)
    x = rng.uniform(size=2000)
    L = np.log(1.0 + 0.5 * x)[:, None]  # bounded ratios, short (k < 0) tail
    res = psis_loo(L)
    raw = logsumexp(L[:, 0] + (-L[:, 0])) - logsumexp(-L[:, 0])
    assert res.pareto_k[0] < 0
    assert abs(res.elpd_i[0] - raw) < 1e-6 * abs(raw) + 1e-6


def test_psis_identical_draws_returns_loglik():
    L = np.tile(np.array([[-0.3, -2.0, -5.5]]), (50, 1))
    res = psis_loo(L)
    np.testing.assert_allclose(res.elpd_i, L[0], rtol=1e-14)
    assert res.looic == pytest.approx(-2 * L[0].sum())


def test_conjugate_normal_exact_loo():
    rng = np.random.default_rng(16)
    y = rng.normal(0.7, 1.0, 6)
    sigma2, tau2 = 1.0, 10.0**2

    def posterior(obs):
        v = 1.0 / (1.0 / tau2 + obs.size / sigma2)
        return v * obs.sum() / sigma2, v

    m, v = posterior(y)
    theta = rng.normal(m, np.sqrt(v), 4000)
    L = stats.norm.logpdf(y[None, :], loc=theta[:, None], scale=1.0)
    exact = 0.0
    for i in range(y.size):
        mi, vi = posterior(np.delete(y, i))
        exact += stats.norm.logpdf(y[i], mi, np.sqrt(vi + sigma2))
    res = psis_loo(L)
    assert abs(res.elpd - exact) < 0.1


def test_heavy_tail_tiered_bad():
    ratios = stats.genpareto.rvs(c=0.9, size=4000, random_state=np.random.default_rng(17)) + 1.0
    _, k = psis_smooth(np.log(ratios))
    assert 0.7 <= k < 1.0
    assert k_tier(k) == "bad"


def test_k_tiers():
    assert [k_tier(k) for k in (0.1, 0.5, 0.69, 0.7, 0.99, 1.0, np.nan)] == [
        "ok", "fair", "fair", "bad", "bad", "very bad", "n/a",
    ]


def test_flags_are_strict():
    flags = flag_observations([3.0, -3.01, 0.1, 0.2], [0.1, 0.2, 0.7, 0.7001])
    assert list(flags["index"]) == [1, 3]
    assert list(flags["reason"]) == ["outlier", "influential"]
