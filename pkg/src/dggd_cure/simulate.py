"""Synthetic cure-fraction data and Monte-Carlo calibration studies.

Each subject gets a Bernoulli(0.5) and a standard-normal covariate, a cure
probability from the logistic link and a latent susceptibility indicator.
Susceptible subjects receive an event time drawn by inverting the DGGD
sub-distribution; everyone is censored by a uniform time on ``(0, max t*)``,
the maximum taken over finite latent times.

Randomness is organised in substreams keyed by ``(seed, n, replicate,
attempt)`` so any replicate can be regenerated in isolation and results do
not depend on execution order.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .distributions import dggd_cure_quantile
from .regression import DGGDCureModel, PriorSpec, SurvivalDataset, cure_probability
from .sampler import SamplerConfig, SamplerError, sample

__all__ = [
    "TrueModel",
    "SimulationError",
    "generate_dataset",
    "StudyConfig",
    "StudyResult",
    "run_replicate",
    "run_study",
    "relative_bias",
]

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised when no usable dataset can be generated."""


@dataclass(frozen=True)
class TrueModel:
    beta: tuple = (-1.0, 0.5, 0.5)
    alpha: float = -2.0
    psi: float = 2.0

    def __post_init__(self):
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        if len(beta) != 3:
            raise ValueError("the simulation design has an intercept and two covariates")
        if not self.alpha < 0:
            raise ValueError("alpha must be strictly negative")
        if not self.psi > 0:
            raise ValueError("psi must be strictly positive")
        object.__setattr__(self, "beta", beta)

    @property
    def values(self):
        """Truth in model order ``(beta0, beta1, beta2, alpha, psi)``."""
        return np.array([*self.beta, self.alpha, self.psi])


def _draw(true_model, n, rng):
    x1 = rng.binomial(1, 0.5, n).astype(float)
    x2 = rng.standard_normal(n)
    X = np.column_stack([np.ones(n), x1, x2])
    p = cure_probability(np.asarray(true_model.beta), X)
    susceptible = rng.uniform(size=n) < 1.0 - p
    latent = np.full(n, np.inf)
    if susceptible.any():
        u = rng.uniform(size=susceptible.sum()) * (1.0 - p[susceptible])
        latent[susceptible] = dggd_cure_quantile(u, true_model.alpha, p[susceptible], true_model.psi)
    return X, latent, susceptible


def generate_dataset(true_model, n, rng, max_attempts=100, strict=True):
    """Simulate one right-censored dataset from the DGGD cure regression.

    Parameters
    ----------
    true_model : TrueModel
    n : int
        Number of subjects.
    rng : numpy.random.Generator or numpy.random.SeedSequence
        With a ``SeedSequence`` each regeneration attempt draws from a fresh
        child stream; a ``Generator`` simply keeps drawing.
    max_attempts : int
        Datasets without any observed event are redrawn up to this many times.
    strict : bool
        If True, exhausting the attempts raises :class:`SimulationError`.
        Otherwise the last draw is returned with every subject censored at a
        ``Uniform(0, 1)`` time (there is no finite latent time to scale by).

    Returns
    -------
    SurvivalDataset
        Design matrix columns are intercept, ``x1`` and ``x2``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    children = rng.spawn(max_attempts) if isinstance(rng, np.random.SeedSequence) else None
    for attempt in range(max_attempts):
        gen = np.random.default_rng(children[attempt]) if children is not None else rng
        X, latent, susceptible = _draw(true_model, n, gen)
        finite = np.isfinite(latent)
        if not finite.any():
            continue
        censor = gen.uniform(0.0, latent[finite].max(), n)
        time = np.minimum(latent, censor)
        event = (latent <= censor).astype(np.int64)
        if event.sum() == 0 or np.any(time <= 0):
            continue
        if attempt:
            logger.debug("dataset accepted after %d regenerations", attempt)
        return SurvivalDataset(time, event, X, ("x1", "x2"))
    if strict:
        raise SimulationError(f"no dataset with observed events in {max_attempts} attempts")
    warnings.warn("every subject is cured; returning an all-censored dataset", RuntimeWarning, stacklevel=2)
    time = gen.uniform(0.0, 1.0, n)
    time = np.where(time > 0, time, 0.5)
    return SurvivalDataset(time, np.zeros(n, dtype=np.int64), X, ("x1", "x2"))


def relative_bias(estimate, truth):
    """Relative bias in percent, ``100 (estimate - truth) / truth``."""
    return 100.0 * (np.asarray(estimate, dtype=float) - truth) / truth


@dataclass(frozen=True)
class StudyConfig:
    """Monte-Carlo study design.

    The default sampler settings are lighter than a production fit (two
    chains of 500 warm-up and 500 draws); every replicate receives its own
    sampler seed from the study seed.
    """

    sample_sizes: tuple = (100, 300, 500, 1000)
    replicates: int = 100
    true_model: TrueModel = field(default_factory=TrueModel)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(chains=2, warmup_iters=500, sampling_iters=500))
    seed: int = 0
    priors: PriorSpec = field(default_factory=PriorSpec)
    interval: float = 0.95
    n_jobs: int = 1

    def __post_init__(self):
        sizes = tuple(int(n) for n in np.atleast_1d(self.sample_sizes))
        if not sizes or min(sizes) < 1:
            raise ValueError("sample sizes must be positive")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not 0 < self.interval < 1:
            raise ValueError("interval must lie in (0, 1)")
        object.__setattr__(self, "sample_sizes", sizes)


PARAMETERS = ("beta0", "beta1", "beta2", "alpha", "psi")


def _replicate_streams(seed, n, rep):
    root = np.random.SeedSequence(int(seed), spawn_key=(int(n), int(rep)))
    data_seq, sampler_seq = root.spawn(2)
    return data_seq, int(sampler_seq.generate_state(1, np.uint64)[0] >> np.uint64(1))


def run_replicate(config, n, rep):
    """Generate and fit one replicate; returns a dict of per-parameter results."""
    data_seq, sampler_seed = _replicate_streams(config.seed, n, rep)
    data = generate_dataset(config.true_model, n, data_seq)
    model = DGGDCureModel(data, config.priors)
    draws = sample(
        model.logp_and_grad,
        model.dim,
        replace(config.sampler, seed=sampler_seed),
        model.constrain,
        model.param_names,
    )
    flat = draws.flat()
    tail = (1.0 - config.interval) / 2.0
    lo, hi = np.quantile(flat, [tail, 1.0 - tail], axis=0)
    truth = config.true_model.values
    return {
        "n": n,
        "replicate": rep,
        "mean": flat.mean(axis=0),
        "sd": flat.std(axis=0, ddof=1),
        "ci_low": lo,
        "ci_high": hi,
        "covered": (lo <= truth) & (truth <= hi),
        "divergent": draws.n_divergent,
        "max_rhat": float(np.max(draws.rhat())),
    }


def _safe_replicate(args):
    config, n, rep = args
    try:
        return run_replicate(config, n, rep)
    except (SamplerError, SimulationError, FloatingPointError) as exc:
        return {"n": n, "replicate": rep, "error": f"{type(exc).__name__}: {exc}"}


@dataclass
class StudyResult:
    """Aggregated and per-replicate outcomes of :func:`run_study`."""

    table: pd.DataFrame
    replicates: pd.DataFrame
    failures: pd.DataFrame

    def n_failed(self, n=None):
        if n is None:
            return len(self.failures)
        return int((self.failures["n"] == n).sum()) if len(self.failures) else 0

    def row(self, n, parameter):
        t = self.table
        hit = t[(t["n"] == n) & (t["parameter"] == parameter)]
        if hit.empty:
            raise KeyError((n, parameter))
        return hit.iloc[0]


def aggregate(records, true_model):
    """Turn replicate records into the bias / coverage table."""
    truth = true_model.values
    rows, long = [], []
    for rec in records:
        for j, name in enumerate(PARAMETERS):
            long.append(
                {
                    "n": rec["n"],
                    "replicate": rec["replicate"],
                    "parameter": name,
                    "true": truth[j],
                    "mean": rec["mean"][j],
                    "sd": rec["sd"][j],
                    "ci_low": rec["ci_low"][j],
                    "ci_high": rec["ci_high"][j],
                    "covered": bool(rec["covered"][j]),
                }
            )
    reps = pd.DataFrame(
        long, columns=["n", "replicate", "parameter", "true", "mean", "sd", "ci_low", "ci_high", "covered"]
    )
    for n in sorted(reps["n"].unique()) if len(reps) else []:
        for j, name in enumerate(PARAMETERS):
            sub = reps[(reps["n"] == n) & (reps["parameter"] == name)]
            mean = sub["mean"].mean()
            rows.append(
                {
                    "n": int(n),
                    "parameter": name,
                    "true": truth[j],
                    "mean": mean,
                    "sd": sub["sd"].mean(),
                    "bias%": float(relative_bias(mean, truth[j])),
                    "coverage": sub["covered"].mean(),
                }
            )
    table = pd.DataFrame(rows, columns=["n", "parameter", "true", "mean", "sd", "bias%", "coverage"])
    return table, reps


def run_study(config, replicate_ids=None):
    """Run the calibration study.

    Parameters
    ----------
    config : StudyConfig
    replicate_ids : iterable of int, optional
        Subset of replicate indices to run (default ``range(replicates)``).
        Because every replicate owns its substream, the first ``k``
        replicates of a larger study are exactly a ``k``-replicate study.

    Returns
    -------
    StudyResult
    """
    ids = range(config.replicates) if replicate_ids is None else list(replicate_ids)
    jobs = [(config, n, rep) for n in config.sample_sizes for rep in ids]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_safe_replicate, jobs))
    else:
        results = [_safe_replicate(job) for job in jobs]
    ok = [r for r in results if "error" not in r]
    failed = pd.DataFrame(
        [(r["n"], r["replicate"], r["error"]) for r in results if "error" in r],
        columns=["n", "replicate", "error"],
    )
    if len(failed):
        logger.warning("%d replicate(s) failed and were excluded", len(failed))
    table, reps = aggregate(ok, config.true_model)
    return StudyResult(table, reps, failed)
