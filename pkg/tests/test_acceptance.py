"""End-to-end acceptance checks.

Each test prints one ``[criterion NN] PASS|FAIL`` line with the measured
quantities, then asserts.  Criteria 1 and 10 run full Monte-Carlo
experiments and take several minutes on one core.
"""

from dataclasses import replace

import mpmath
import numpy as np
import pytest
from scipy import integrate
from scipy import stats

from dggd_cure import distributions as d
from dggd_cure.cli import main
from dggd_cure.diagnostics import (
    cpo,
    deviance_residuals,
    dic,
    fit_gpd_tail,
    flag_observations,
    lpml,
    martingale_residuals,
    pointwise_loglik,
    psis_loo,
    residuals,
)
from dggd_cure.estimators import fit_model
from dggd_cure.mixture import WeibullMixtureCureModel
from dggd_cure.regression import DGGDCureModel
from dggd_cure.sampler import SamplerConfig, sample
from dggd_cure.simulate import StudyConfig, TrueModel, generate_dataset, relative_bias, run_study

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def _report(number, title, passed, detail, table=None):
        with capsys.disabled():
            if table is not None:
                print("\n" + table.to_string(index=False))
            print(f"\n[criterion {number:2d}] {'PASS' if passed else 'FAIL'}  {title}: {detail}", flush=True)
        assert passed, detail

    return _report


def _richardson_gradient(f, u, h=1e-3):
    """Central differences with one Richardson step (error O(h^4))."""
    g = np.empty_like(u)
    for j in range(u.size):
        e = np.zeros_like(u)
        e[j] = h
        d1 = (f(u + e) - f(u - e)) / (2 * h)
        d2 = (f(u + 2 * e) - f(u - 2 * e)) / (4 * h)
        g[j] = (4 * d1 - d2) / 3
    return g


# 1 ------------------------------------------------------------------------------


def test_c01_simulation_study(report):
    truth = TrueModel(beta=(-1.0, 0.5, 0.5), alpha=-2.0, psi=2.0)
    sampler = SamplerConfig(chains=2, warmup_iters=500, sampling_iters=500)
    big = run_study(StudyConfig(sample_sizes=(1000,), replicates=100, true_model=truth, sampler=sampler, seed=2024))
    small = run_study(StudyConfig(sample_sizes=(100, 300), replicates=50, true_model=truth, sampler=sampler, seed=2024))

    table = big.table
    worst_bias = table["bias%"].abs().max()
    cov = table["coverage"]
    ok_main = worst_bias <= 5.0 and cov.between(0.90, 0.99).all() and big.n_failed() == 0

    # the first 50 replicates of the n=1000 arm are exactly a 50-replicate run
    reps = big.replicates
    first50 = reps[(reps["replicate"] < 50) & (reps["parameter"] == "beta0")]
    b0 = [
        abs(small.row(100, "beta0")["bias%"]),
        abs(small.row(300, "beta0")["bias%"]),
        abs(relative_bias(first50["mean"].mean(), truth.beta[0])),
    ]
    ok_mono = b0[0] > b0[1] > b0[2] and small.n_failed() == 0
    detail = (
        f"n=1000 x100: max|bias|={worst_bias:.2f}% coverage=[{cov.min():.2f},{cov.max():.2f}] "
        f"failed={big.n_failed()}; beta0 |bias| n=100/300/1000 (50 reps) = "
        f"{b0[0]:.2f}%/{b0[1]:.2f}%/{b0[2]:.2f}%"
    )
    report(1, "simulation-study bias/coverage and beta0 bias shrinkage", ok_main and ok_mono, detail, table)


# 2 ------------------------------------------------------------------------------


def test_c02_mass_identity(report):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(50):
        alpha = -np.exp(rng.uniform(np.log(0.05), np.log(5.0)))
        mu = np.exp(rng.uniform(np.log(0.1), np.log(5.0)))
        psi = np.exp(rng.uniform(np.log(0.2), np.log(5.0)))
        f = lambda t: np.exp(d.dggd_logpdf(t, alpha, mu, psi))
        scale = 1.0 / abs(alpha)
        mass = sum(
            integrate.quad(f, a, b, limit=400, epsabs=1e-14, epsrel=1e-12)[0]
            for a, b in ((0, scale), (scale, 10 * scale), (10 * scale, np.inf))
        )
        worst = max(worst, abs(mass + d.dggd_cure_fraction(alpha, mu, psi) - 1.0))
    report(2, "pdf mass + cure fraction = 1", worst < 1e-6, f"max error {worst:.2e} over 50 triples (tol 1e-6)")


# 3 ------------------------------------------------------------------------------


def test_c03_psi_one_reduction(report):
    t = np.linspace(1e-3, 20.0, 1000)
    worst = 0.0
    for alpha, mu in ((-2.0, 0.5), (-0.3, 1.7), (-5.0, 3.0), (0.4, 0.8)):
        for a, b in (
            (d.dggd_logpdf(t, alpha, mu, 1.0), d.gompertz_logpdf(t, alpha, mu)),
            (d.dggd_logsf(t, alpha, mu, 1.0), d.gompertz_logsf(t, alpha, mu)),
        ):
            worst = max(worst, np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))
    report(3, "psi=1 reduces to Gompertz", worst <= 1e-12, f"max rel. diff {worst:.2e} on 1000-point grids (tol 1e-12)")


# 4 ------------------------------------------------------------------------------


def test_c04_reparam_round_trip(report):
    A, P, Q = np.meshgrid(
        -np.geomspace(0.01, 10.0, 10), np.linspace(1e-4, 1 - 1e-4, 10), np.geomspace(0.05, 20.0, 10), indexing="ij"
    )
    mu = d.reparam_to_scale(A, P, Q)
    back = d.dggd_cure_fraction(A, mu, Q)
    worst = np.max(np.abs(back - P))
    report(4, "p -> mu -> p round trip", worst <= 1e-12, f"max |error| {worst:.2e} over 1000 grid points (tol 1e-12)")


# 5 ------------------------------------------------------------------------------


def test_c05_gradients(report):
    rng = np.random.default_rng(505)
    worst = {"dggd": 0.0, "weibull-mixture": 0.0}
    for _ in range(100):
        truth = TrueModel(
            beta=(rng.uniform(-2, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
            alpha=-np.exp(rng.uniform(-1, 1.5)),
            psi=np.exp(rng.uniform(-0.7, 1.0)),
        )
        data = generate_dataset(truth, int(rng.integers(20, 200)), rng)
        for family, model in (("dggd", DGGDCureModel(data)), ("weibull-mixture", WeibullMixtureCureModel(data))):
            u = rng.uniform(-1.0, 1.0, model.dim)
            if family == "dggd":
                u[-2] = np.log(-truth.alpha) + rng.normal(0, 0.3)
            _, g = model.logp_and_grad(u)
            fd = _richardson_gradient(model.log_posterior_unconstrained, u)
            rel = np.abs(g - fd) / np.maximum(np.abs(g), np.abs(fd))
            worst[family] = max(worst[family], float(np.max(rel)))
    ok = max(worst.values()) < 1e-5
    detail = ", ".join(f"{k}: max rel. error {v:.2e}" for k, v in worst.items()) + " (tol 1e-5)"
    report(5, "analytic gradient vs finite differences", ok, detail)


# 6 ------------------------------------------------------------------------------


def test_c06_sampler_calibration(report):
    def target(q):
        return -0.5 * float(q @ q), -q

    draws = sample(target, 10, SamplerConfig(chains=4, warmup_iters=1000, sampling_iters=1000, seed=0))
    z = np.abs(draws.mean()) / draws.mcse()
    var_err = np.abs(draws.flat().var(axis=0, ddof=1) - 1.0)
    rhat = draws.rhat()
    ok = np.all(z < 3) and np.all(var_err < 0.1) and draws.n_divergent == 0 and np.all(rhat < 1.01)
    detail = (
        f"max |mean|/MCSE={z.max():.2f}, max |var-1|={var_err.max():.3f}, "
        f"divergences={draws.n_divergent}, max R-hat={rhat.max():.4f}"
    )
    report(6, "NUTS on 10-d standard normal", ok, detail)


# 7 ------------------------------------------------------------------------------


def test_c07_quantile_inversion(report):
    rng = np.random.default_rng(707)
    worst, worst_closed = 0.0, 0.0
    for k in range(20):
        alpha = -np.exp(rng.uniform(-2, 1.5))
        mu = np.exp(rng.uniform(-1.5, 1.5))
        psi = 1.0 if k < 5 else np.exp(rng.uniform(-1.2, 1.5))
        mass = 1.0 - d.dggd_cure_fraction(alpha, mu, psi)
        u = np.linspace(0.0005, 0.9995, 200) * mass
        t = d.dggd_quantile(u, alpha, mu, psi)
        worst = max(worst, np.max(np.abs(-np.expm1(d.dggd_logsf(t, alpha, mu, psi)) - u)))
        if psi == 1.0:
            closed = np.log1p(-(alpha / mu) * np.log1p(-u)) / alpha
            worst_closed = max(worst_closed, np.max(np.abs(t - closed) / np.maximum(1.0, closed)))
    ok = worst <= 1e-8 and worst_closed <= 1e-8
    detail = f"max |F(Q(u))-u|={worst:.2e}, psi=1 closed form max rel. diff={worst_closed:.2e} (tol 1e-8)"
    report(7, "quantile inversion", ok, detail)


# 8 ------------------------------------------------------------------------------


def test_c08_cpo_stability(report):
    mpmath.mp.dps = 50
    rng = np.random.default_rng(808)
    worst = 0.0
    for _ in range(100):
        S, n = int(rng.integers(2, 51)), int(rng.integers(1, 11))
        L = rng.normal(-3.0, 4.0, size=(S, n))
        _, lc = cpo(L)
        for i in range(n):
            s = mpmath.fsum(mpmath.exp(-mpmath.mpf(float(x))) for x in L[:, i])
            naive = float(mpmath.log(S) - mpmath.log(s))
            worst = max(worst, abs(lc[i] - naive) / max(1.0, abs(naive)))
    report(8, "stable log-CPO vs 50-digit harmonic mean", worst <= 1e-12, f"max rel. diff {worst:.2e} (tol 1e-12)")


# 9 ------------------------------------------------------------------------------


def test_c09_psis_loo_oracle(report):
    rng = np.random.default_rng(909)
    y = rng.normal(0.5, 1.0, 6)
    sigma2, tau2 = 1.0, 100.0

    def posterior(obs):
        v = 1.0 / (1.0 / tau2 + obs.size / sigma2)
        return v * obs.sum() / sigma2, v

    m, v = posterior(y)
    theta = rng.normal(m, np.sqrt(v), 4000)
    L = stats.norm.logpdf(y[None, :], loc=theta[:, None], scale=np.sqrt(sigma2))
    exact = sum(
        stats.norm.logpdf(y[i], posterior(np.delete(y, i))[0], np.sqrt(posterior(np.delete(y, i))[1] + sigma2))
        for i in range(y.size)
    )
    gap = abs(psis_loo(L).elpd - exact)
    k_err = {}
    for k in (0.0, 0.5):
        x = stats.genpareto.rvs(c=k, size=2000, random_state=np.random.default_rng(int(10 * k) + 90))
        k_err[k] = abs(fit_gpd_tail(x).k - k)
    ok = gap < 0.1 and max(k_err.values()) <= 0.1
    detail = f"|elpd - exact|={gap:.4f} (tol 0.1); k-hat errors k=0: {k_err[0.0]:.3f}, k=0.5: {k_err[0.5]:.3f} (tol 0.1)"
    report(9, "PSIS-LOO conjugate oracle and GPD recovery", ok, detail)


# 10 -----------------------------------------------------------------------------


def test_c10_model_selection(report):
    truth = TrueModel()
    sampler = SamplerConfig(chains=2, warmup_iters=500, sampling_iters=500)
    wins = {"DIC": 0, "-2LPML": 0, "-2elpd": 0}
    all_three = 0
    for r in range(20):
        data = generate_dataset(truth, 500, np.random.SeedSequence(1010, spawn_key=(r,)))
        crit = {}
        for family in ("dggd", "gompertz"):
            fit = fit_model(data, family, sampler=replace(sampler, seed=1000 + r))
            theta = fit.draws.flat()
            L = pointwise_loglik(fit.model, theta)
            crit[family] = {
                "DIC": dic(fit.model, theta).dic,
                "-2LPML": -2.0 * lpml(cpo(L)[1]),
                "-2elpd": psis_loo(L).looic,
            }
        better = {k: crit["dggd"][k] < crit["gompertz"][k] for k in wins}
        for k, b in better.items():
            wins[k] += b
        all_three += all(better.values())
    detail = f"DGGD better on all three in {all_three}/20 (need >= 15); per criterion {wins}"
    report(10, "DGGD preferred over Gompertz on DGGD data", all_three >= 15, detail)


# 11 -----------------------------------------------------------------------------


def test_c11_residual_contracts(report):
    rng = np.random.default_rng(1111)
    # algebraic contracts over random survival values
    log_s = -rng.exponential(2.0, 5000)
    log_s[:50] = 0.0
    event = rng.integers(0, 2, 5000)
    rm = martingale_residuals(event, log_s)
    rd = deviance_residuals(rm, event)
    ok_bound = np.all(rm <= 1.0)
    ok_zero = np.array_equal(rd == 0, rm == 0)

    # flag rate on clean simulated data
    data = generate_dataset(TrueModel(), 500, np.random.SeedSequence(1111))
    fit = fit_model(data, "dggd", sampler=SamplerConfig(chains=2, warmup_iters=500, sampling_iters=500, seed=11))
    theta = fit.draws.flat()
    res = residuals(fit.model, theta)
    loo = psis_loo(pointwise_loglik(fit.model, theta))
    flags = flag_observations(res["r_D"], loo.pareto_k)
    rate = len(flags) / data.n
    ok_fit = np.all(res["r_M"] <= 1.0) and np.array_equal(res["r_D"] == 0, res["r_M"] == 0)
    ok = ok_bound and ok_zero and ok_fit and rate < 0.01
    detail = f"r_M <= 1: {bool(ok_bound and ok_fit)}, r_D=0 iff r_M=0: {bool(ok_zero)}, flagged {len(flags)}/{data.n} = {rate:.1%} (need < 1%)"
    report(11, "residual contracts and clean-data flag rate", ok, detail)


# 12 -----------------------------------------------------------------------------


def test_c12_determinism(report, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(
        "[data]\npath = data.csv\ncovariates = x1, x2\n"
        "[model]\nfamilies = dggd, gompertz, weibull-mixture\n"
        "[sampler]\nchains = 2\nwarmup = 150\nsamples = 150\nseed = 12\n"
        "[output]\ndraws = true\n"
        "[simulate]\nn = 120\n"
        "[study]\nsample_sizes = 50\nreplicates = 2\nchains = 1\nwarmup = 100\nsamples = 100\n"
    )
    assert main(["simulate", "--config", str(ini), "--out", str(tmp_path)]) == 0
    (tmp_path / "simulated.csv").rename(tmp_path / "data.csv")
    mismatched = []
    for cmd in ("simulate", "fit", "mc-study", "diagnose", "compare", "km"):
        snapshots = []
        for k in range(2):
            out = tmp_path / f"{cmd}-{k}"
            code = main([cmd, "--config", str(ini), "--out", str(out)])
            snapshots.append((code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}))
        if snapshots[0][0] != 0 or not snapshots[0][1] or snapshots[0] != snapshots[1]:
            mismatched.append(cmd)
    detail = "all six subcommands byte-identical on rerun" if not mismatched else f"differs: {mismatched}"
    report(12, "rerun determinism", not mismatched, detail)
