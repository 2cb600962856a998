import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dggd_cure.estimators import CureRegressor, check_survival_data, fit_model
from dggd_cure.sampler import SamplerConfig
from dggd_cure.simulate import TrueModel, generate_dataset


@pytest.fixture(scope="module")
def sim():
    return generate_dataset(TrueModel(), 400, np.random.SeedSequence(11))


def test_target_formats_agree(sim):
    X = sim.X[:, 1:]
    y2 = np.column_stack([sim.time, sim.event])
    rec = np.zeros(sim.n, dtype=[("time", float), ("event", int)])
    rec["time"], rec["event"] = sim.time, sim.event
    for y in (y2, (sim.time, sim.event), rec):
        Xc, t, e = check_survival_data(X, y)
        np.testing.assert_array_equal(t, sim.time)
        np.testing.assert_array_equal(e, sim.event)
        assert Xc.shape == X.shape


@pytest.mark.parametrize(
    "y, msg",
    [
        (np.array([[1.0, 1.0], [0.0, 0.0]]), "strictly positive"),
        (np.array([[1.0, 1.0], [2.0, 3.0]]), "0 or 1"),
        (np.array([[1.0, 1.0, 0.0], [2.0, 0.0, 0.0]]), "two columns"),
    ],
)
def test_target_validation(y, msg):
    with pytest.raises(ValueError, match=msg):
        check_survival_data(np.zeros((2, 1)), y)


def test_length_mismatch():
    with pytest.raises(ValueError):
        check_survival_data(np.zeros((3, 1)), np.array([[1.0, 1.0], [2.0, 0.0]]))


def test_regressor_fit_predict(sim):
    est = CureRegressor(chains=2, warmup=200, samples=200, seed=1)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict(sim.X[:3, 1:])
    est.fit(sim.X[:, 1:], np.column_stack([sim.time, sim.event]))
    p = est.predict_cure_proba(sim.X[:5, 1:])
    assert p.shape == (5,) and np.all((p > 0) & (p < 1))
    s = est.predict_survival(sim.X[:5, 1:], [0.0, 1.0, 50.0])
    assert s.shape == (5, 3)
    np.testing.assert_allclose(s[:, 0], 1.0)
    # long-run survival reaches the cure fraction from above
    assert np.all(s[:, 1] >= s[:, 2] - 1e-12)
    np.testing.assert_allclose(s[:, 2], p, atol=1e-6)
    assert list(est.summary()["parameter"]) == ["beta0", "beta1", "beta2", "alpha", "psi"]
    with pytest.raises(ValueError, match="features"):
        est.predict(np.zeros((2, 3)))


def test_regressor_rejects_unknown_family(sim):
    with pytest.raises(ValueError, match="family"):
        CureRegressor(family="lognormal").fit(sim.X[:, 1:], (sim.time, sim.event))


def test_mixture_regressor_parameter_names(sim):
    est = CureRegressor(family="weibull-mixture", chains=1, warmup=100, samples=100, seed=2)
    est.fit(sim.X[:, 1:], (sim.time, sim.event))
    assert list(est.summary()["parameter"])[-2:] == ["lambda", "gamma"]


def test_intervals_cover_truth_in_one_run():
    """Probabilistic smoke test at n=1000: at least 3 of 5 intervals cover."""
    truth = TrueModel()
    data = generate_dataset(truth, 1000, np.random.SeedSequence(5))
    draws = fit_model(data, "dggd", sampler=SamplerConfig(chains=2, warmup_iters=400, sampling_iters=400, seed=5)).draws
    s = draws.summary()
    covered = (s["ci_low"] <= truth.values) & (truth.values <= s["ci_high"])
    assert covered.sum() >= 3
