"""Kaplan-Meier product-limit estimator with Greenwood confidence bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import norm

__all__ = ["KmCurve", "kaplan_meier"]


@dataclass(frozen=True)
class KmCurve:
    """Survival estimate at each distinct event time.

    ``lower``/``upper`` are pointwise bounds from the Greenwood variance on
    the log scale, ``S exp(-/+ z sqrt(sum d / (n (n - d))))``, clipped to
    ``[0, 1]``.
    """

    time: np.ndarray
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t):
        """Right-continuous step function evaluated at ``t`` (1 before the first event)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.time, t, side="right")
        return np.concatenate([[1.0], self.survival])[idx]

    @property
    def plateau(self):
        """Last value of the estimate (1.0 when nothing has happened)."""
        return float(self.survival[-1]) if self.survival.size else 1.0

    def to_frame(self):
        return pd.DataFrame(
            {
                "time": self.time,
                "at_risk": self.at_risk,
                "events": self.events,
                "survival": self.survival,
                "lower": self.lower,
                "upper": self.upper,
            }
        )


def kaplan_meier(time, event=None, level=0.95):
    """Product-limit estimate of the survival function.

    Parameters
    ----------
    time : array-like or SurvivalDataset
        Observed times; a dataset supplies both times and event flags.
    event : array-like of {0, 1}, optional
    level : float
        Confidence level of the pointwise bounds.

    Returns
    -------
    KmCurve
        An all-censored sample yields empty arrays, i.e. ``S = 1`` everywhere.
    """
    if event is None:
        time, event = time.time, time.event
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(int)
    if time.size == 0:
        raise ValueError("at least one observation is required")
    if time.shape != event.shape:
        raise ValueError("time and event must have the same length")

    event_times = np.unique(time[event == 1])
    sorted_t = np.sort(time)
    at_risk = time.size - np.searchsorted(sorted_t, event_times, side="left")
    d = np.array([np.sum((time == t) & (event == 1)) for t in event_times], dtype=int)

    surv = np.cumprod(1.0 - d / at_risk)
    z = norm.ppf(0.5 + level / 2.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        se = np.sqrt(np.cumsum(d / (at_risk * (at_risk - d))))
        finite = np.isfinite(se) & (surv > 0)
        lower = np.where(finite, surv * np.exp(-z * se), 0.0)
        upper = np.where(finite, surv * np.exp(z * se), 0.0)
    return KmCurve(
        event_times,
        surv,
        np.clip(lower, 0.0, 1.0),
        np.clip(upper, 0.0, 1.0),
        at_risk.astype(int),
        d,
    )
