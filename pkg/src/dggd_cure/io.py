"""Data ingestion, run configuration and file emission.

Configuration files are INI documents with one section per concern::

    [data]
    path = patients.csv
    time = time
    event = status
    covariates = age50, metastasis
    exclude = 212

    [model]
    family = dggd
    families = dggd, gompertz, weibull-mixture

    [priors]
    beta_sd = 10

    [sampler]
    chains = 4
    warmup = 1000
    samples = 1000
    seed = 0

Observation numbers in ``exclude`` (and in every emitted file) are 1-based
data-row numbers, i.e. the header is not counted.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .regression import PriorSpec, SurvivalDataset
from .sampler import SamplerConfig

__all__ = [
    "ValidationError",
    "FAMILIES",
    "DataSpec",
    "RunConfig",
    "load_dataset",
    "load_config",
    "parse_index_list",
    "write_csv",
    "write_json",
]

logger = logging.getLogger(__name__)

FAMILIES = ("dggd", "gompertz", "weibull-mixture")


class ValidationError(ValueError):
    """Bad user input (data file, configuration or flags)."""


# Data -------------------------------------------------------------------------


@dataclass(frozen=True)
class DataSpec:
    path: str | None = None
    time: str = "time"
    event: str = "event"
    covariates: tuple | None = None
    exclude: tuple = ()


def parse_index_list(text):
    """Parse ``"3, 17,212"`` into a tuple of positive ints."""
    if text is None:
        return ()
    if isinstance(text, (list, tuple)):
        items = text
    else:
        items = [s for s in str(text).replace(";", ",").split(",") if s.strip()]
    out = []
    for item in items:
        try:
            value = int(str(item).strip())
        except ValueError:
            raise ValidationError(f"observation numbers must be integers, got {item!r}") from None
        if value < 1:
            raise ValidationError(f"observation numbers are 1-based, got {value}")
        out.append(value)
    return tuple(sorted(set(out)))


def _split_names(text):
    if text is None:
        return None
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def load_dataset(path, time="time", event="event", covariates=None, exclude=()):
    """Read a survival CSV into a :class:`SurvivalDataset`.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV with a header row.
    time, event : str
        Column names of the observed time and the 0/1 event indicator.
    covariates : sequence of str, optional
        Covariate columns, in design order.  Defaults to every other column.
    exclude : sequence of int
        1-based data-row numbers to drop before fitting.

    Returns
    -------
    SurvivalDataset
        With an intercept column prepended and ``feature_names`` set.

    Raises
    ------
    ValidationError
        Naming the offending row for non-numeric cells, non-positive times or
        event codes other than 0/1.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ValidationError(f"{path}: empty file") from None
            rows = [r for r in reader if any(c.strip() for c in r)]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None

    col = {name: j for j, name in enumerate(header)}
    if covariates is None:
        covariates = tuple(h for h in header if h not in (time, event))
    for name in (time, event, *covariates):
        if name not in col:
            raise ValidationError(f"{path}: missing column {name!r}")

    n = len(rows)
    exclude = parse_index_list(exclude)
    if exclude and exclude[-1] > n:
        raise ValidationError(f"excluded observation {exclude[-1]} is out of range (n = {n})")

    t = np.empty(n)
    d = np.empty(n, dtype=np.int64)
    Z = np.empty((n, len(covariates)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ValidationError(f"row {i}: expected {len(header)} fields, found {len(row)}")

        def number(name):
            cell = row[col[name]].strip()
            try:
                value = float(cell)
            except ValueError:
                raise ValidationError(f"row {i}: non-numeric value {cell!r} in column {name!r}") from None
            if not math.isfinite(value):
                raise ValidationError(f"row {i}: non-finite value in column {name!r}")
            return value

        t[i - 1] = number(time)
        if not t[i - 1] > 0:
            raise ValidationError(f"row {i}: time must be strictly positive, got {t[i - 1]:g}")
        ev = number(event)
        if ev not in (0.0, 1.0):
            raise ValidationError(f"row {i}: event must be 0 or 1, got {ev:g}")
        d[i - 1] = int(ev)
        for j, name in enumerate(covariates):
            Z[i - 1, j] = number(name)

    keep = np.ones(n, dtype=bool)
    keep[[k - 1 for k in exclude]] = False
    data = SurvivalDataset.from_covariates(t[keep], d[keep], Z[keep], feature_names=covariates)
    logger.info("loaded %d rows (%d events) from %s", data.n, int(data.event.sum()), path)
    return data


# Configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs, after merging file and flags."""

    data: DataSpec = field(default_factory=DataSpec)
    family: str = "dggd"
    families: tuple = ("dggd", "gompertz")
    priors: PriorSpec = field(default_factory=PriorSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    output: str = "out"
    write_draws: bool = False
    simulate: dict = field(default_factory=dict)
    study: dict = field(default_factory=dict)

    def with_overrides(self, seed=None, out=None, exclude=None, chains=None, warmup=None, samples=None):
        sampler_kw = {}
        if seed is not None:
            sampler_kw["seed"] = int(seed)
        if chains is not None:
            sampler_kw["chains"] = int(chains)
        if warmup is not None:
            sampler_kw["warmup_iters"] = int(warmup)
        if samples is not None:
            sampler_kw["sampling_iters"] = int(samples)
        try:
            sampler = replace(self.sampler, **sampler_kw)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        data = self.data
        if exclude is not None:
            data = replace(data, exclude=parse_index_list(exclude))
        return replace(self, sampler=sampler, data=data, output=out if out is not None else self.output)


_SECTIONS = {
    "data": {"path", "time", "event", "covariates", "exclude"},
    "model": {"family", "families"},
    "priors": {f.name for f in fields(PriorSpec)},
    "sampler": {"chains", "warmup", "samples", "seed", "target_accept", "max_tree_depth", "init_radius", "max_delta_energy"},
    "output": {"dir", "draws"},
    "simulate": {"n", "beta", "alpha", "psi"},
    "study": {"sample_sizes", "replicates", "chains", "warmup", "samples", "n_jobs"},
}


def _check_family(name):
    if name not in FAMILIES:
        raise ValidationError(f"unknown model family {name!r}; choose from {', '.join(FAMILIES)}")
    return name


def _floats(text):
    return tuple(float(s) for s in str(text).split(",") if s.strip())


def load_config(path=None):
    """Parse an INI configuration file (``None`` gives all defaults)."""
    if path is None:
        return RunConfig()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ValidationError(f"cannot read configuration {path}: {exc}") from None

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValidationError(f"unknown configuration section [{section}]")
        unknown = set(parser[section]) - _SECTIONS[section]
        if unknown:
            raise ValidationError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")

    def get(section, key, default=None):
        value = parser.get(section, key, fallback=None) if parser.has_section(section) else None
        return default if value is None or not value.strip() else value

    try:
        base = Path(path).parent
        data_path = get("data", "path")
        if data_path is not None and not Path(data_path).is_absolute():
            data_path = str(base / data_path)
        data = DataSpec(
            path=data_path,
            time=get("data", "time", "time"),
            event=get("data", "event", "event"),
            covariates=_split_names(get("data", "covariates")),
            exclude=parse_index_list(get("data", "exclude")),
        )
        family = _check_family(get("model", "family", "dggd"))
        families = tuple(_check_family(f) for f in _split_names(get("model", "families", "dggd, gompertz")))

        prior_kw = {}
        if parser.has_section("priors"):
            for key, value in parser["priors"].items():
                prior_kw[key] = _floats(value) if key in ("beta_mean", "beta_sd") else float(value)
                if isinstance(prior_kw[key], tuple) and len(prior_kw[key]) == 1:
                    prior_kw[key] = prior_kw[key][0]
        priors = PriorSpec(**prior_kw)

        s = parser["sampler"] if parser.has_section("sampler") else {}
        sampler = SamplerConfig(
            chains=int(s.get("chains", 4)),
            warmup_iters=int(s.get("warmup", 1000)),
            sampling_iters=int(s.get("samples", 1000)),
            seed=int(s.get("seed", 0)),
            target_accept=float(s.get("target_accept", 0.8)),
            max_tree_depth=int(s.get("max_tree_depth", 10)),
            init_radius=float(s.get("init_radius", 2.0)),
            max_delta_energy=float(s.get("max_delta_energy", 1000.0)),
        )
        output = get("output", "dir", "out")
        draws = parser.getboolean("output", "draws", fallback=False) if parser.has_section("output") else False
        simulate = {}
        if parser.has_section("simulate"):
            sim = parser["simulate"]
            if "n" in sim:
                simulate["n"] = int(sim["n"])
            if "beta" in sim:
                simulate["beta"] = _floats(sim["beta"])
            for key in ("alpha", "psi"):
                if key in sim:
                    simulate[key] = float(sim[key])
        study = {}
        if parser.has_section("study"):
            st = parser["study"]
            if "sample_sizes" in st:
                study["sample_sizes"] = tuple(int(v) for v in _floats(st["sample_sizes"]))
            for key in ("replicates", "chains", "warmup", "samples", "n_jobs"):
                if key in st:
                    study[key] = int(st[key])
    except ValueError as exc:
        raise ValidationError(f"invalid configuration value: {exc}") from None

    return RunConfig(data, family, families, priors, sampler, output, draws, simulate, study)


# Writers ----------------------------------------------------------------------


def write_csv(frame, path, float_format="%.10g"):
    """Write a DataFrame without index, UTF-8, ``\\n`` line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n", encoding="utf-8")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n", encoding="utf-8")
    return path
