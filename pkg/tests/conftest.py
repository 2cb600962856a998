import numpy as np
import pytest

from dggd_cure.regression import SurvivalDataset


def random_dataset(rng, n=40, censor_rate=0.4):
    x1 = rng.integers(0, 2, n)
    x2 = rng.normal(size=n)
    time = rng.exponential(1.0, n) + 1e-3
    event = (rng.uniform(size=n) > censor_rate).astype(int)
    return SurvivalDataset.from_covariates(time, event, np.column_stack([x1, x2]))


def central_difference(f, u, h=1e-6):
    g = np.empty_like(u)
    for j in range(u.size):
        e = np.zeros_like(u)
        e[j] = h * max(1.0, abs(u[j]))
        g[j] = (f(u + e) - f(u - e)) / (2 * e[j])
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
