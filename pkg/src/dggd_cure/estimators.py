"""Scikit-learn style estimator around the cure models and the sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .mixture import WeibullMixtureCureModel
from .regression import ETA_CLIP, DGGDCureModel, PriorSpec, SurvivalDataset
from .sampler import PosteriorDraws, SamplerConfig, sample

__all__ = ["check_survival_data", "make_model", "FitResult", "fit_model", "CureRegressor"]


def check_survival_data(X, y):
    """Validate a covariate matrix and a survival target.

    ``y`` may be a ``(n, 2)`` array of ``(time, event)`` columns, a pair of
    sequences, or a structured array with ``time`` and ``event`` fields.

    Returns
    -------
    X : ndarray of shape (n, p)
    time : ndarray of shape (n,)
    event : ndarray of int of shape (n,)
    """
    if isinstance(y, np.ndarray) and y.dtype.names:
        time, event = y["time"], y["event"]
    elif isinstance(y, tuple) and len(y) == 2:
        time, event = y
    else:
        y = check_array(y, ensure_2d=True, dtype=float)
        if y.shape[1] != 2:
            raise ValueError("y must have two columns: time and event")
        time, event = y[:, 0], y[:, 1]
    time = check_array(np.asarray(time, dtype=float), ensure_2d=False)
    event = np.asarray(event, dtype=float)
    X = check_array(X, ensure_2d=True, dtype=float, ensure_min_features=0)
    check_consistent_length(X, time, event)
    if np.any(time <= 0):
        raise ValueError("survival times must be strictly positive")
    if not np.all((event == 0) | (event == 1)):
        raise ValueError("event indicators must be 0 or 1")
    return X, time, event.astype(np.int64)


def make_model(family, data, priors=None):
    """Instantiate the log-posterior object for ``family``."""
    if family == "weibull-mixture":
        return WeibullMixtureCureModel(data, priors)
    return DGGDCureModel(data, priors, family=family)


@dataclass
class FitResult:
    family: str
    model: object
    draws: PosteriorDraws


def fit_model(data, family="dggd", priors=None, sampler=None):
    """Sample the posterior of ``family`` on ``data``."""
    model = make_model(family, data, priors)
    draws = sample(model.logp_and_grad, model.dim, sampler or SamplerConfig(), model.constrain, model.param_names)
    return FitResult(family, model, draws)


class CureRegressor(BaseEstimator):
    """Bayesian cure-fraction survival regression fitted by NUTS.

    The cure probability is ``logistic(b0 + x' b)``; the susceptible
    survival follows the chosen family.

    Parameters
    ----------
    family : {"dggd", "gompertz", "weibull-mixture"}
    chains, warmup, samples : int
        Sampler layout.
    seed : int
    target_accept : float
    max_tree_depth : int
    priors : PriorSpec, optional

    Attributes
    ----------
    draws_ : PosteriorDraws
    model_ : log-posterior object
    n_features_in_ : int
    """

    def __init__(
        self,
        family="dggd",
        chains=4,
        warmup=1000,
        samples=1000,
        seed=0,
        target_accept=0.8,
        max_tree_depth=10,
        priors=None,
    ):
        self.family = family
        self.chains = chains
        self.warmup = warmup
        self.samples = samples
        self.seed = seed
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.priors = priors

    def _sampler_config(self):
        return SamplerConfig(
            chains=self.chains,
            warmup_iters=self.warmup,
            sampling_iters=self.samples,
            seed=self.seed,
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
        )

    def fit(self, X, y):
        if self.family not in ("dggd", "gompertz", "weibull-mixture"):
            raise ValueError(f"unknown family {self.family!r}")
        X, time, event = check_survival_data(X, y)
        data = SurvivalDataset.from_covariates(time, event, X)
        priors = self.priors if self.priors is not None else PriorSpec()
        result = fit_model(data, self.family, priors, self._sampler_config())
        self.model_ = result.model
        self.draws_ = result.draws
        self.n_features_in_ = X.shape[1]
        return self

    def _design(self, X):
        check_is_fitted(self, "draws_")
        X = check_array(X, ensure_2d=True, dtype=float, ensure_min_features=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.column_stack([np.ones(X.shape[0]), X])

    def predict_cure_proba(self, X):
        """Posterior mean cure probability for each row of ``X``."""
        design = self._design(X)
        k = design.shape[1]
        beta = self.draws_.flat()[:, :k]
        return expit(np.clip(beta @ design.T, -ETA_CLIP, ETA_CLIP)).mean(axis=0)

    def predict(self, X):
        return self.predict_cure_proba(X)

    def predict_survival(self, X, times):
        """Posterior mean population survival, shape ``(n_rows, n_times)``."""
        design = self._design(X)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        theta = self.draws_.flat()
        out = np.empty((design.shape[0], times.size))
        for j, t in enumerate(times):
            tt = np.full(design.shape[0], t)
            out[:, j] = np.exp(self.model_.log_survival(theta, time=tt, X=design)).mean(axis=0)
        return out

    def summary(self, interval=0.95):
        check_is_fitted(self, "draws_")
        return self.draws_.summary(interval)
