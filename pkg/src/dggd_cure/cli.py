"""Command-line interface: ``dggd-cure <subcommand> [options]``.

Subcommands
-----------
fit        sample the posterior of one model family and summarise it
simulate   write a synthetic dataset
mc-study   Monte-Carlo bias / coverage study
diagnose   residuals, CPO, DIC and PSIS-LOO for a fitted model
compare    model-comparison table across families
km         Kaplan-Meier table of a dataset

Exit status is 0 on success, 1 for invalid input and 2 when the sampler
fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .diagnostics import (
    K_TIERS,
    cpo,
    dic,
    flag_observations,
    lpml,
    pointwise_loglik,
    psis_loo,
    residuals,
)
from .estimators import fit_model, make_model
from .io import ValidationError, load_config, load_dataset, write_csv, write_json
from .km import kaplan_meier
from .sampler import SamplerConfig, SamplerError
from .simulate import SimulationError, StudyConfig, TrueModel, generate_dataset, run_study

logger = logging.getLogger("dggd_cure")

EXIT_OK, EXIT_INVALID, EXIT_SAMPLER = 0, 1, 2


def _common(parser):
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--seed", type=int, help="random seed (overrides [sampler] seed)")
    parser.add_argument("--out", help="output directory (overrides [output] dir)")
    parser.add_argument("--exclude", help="comma-separated 1-based observation numbers to drop")
    parser.add_argument("--chains", type=int)
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--data", help="input CSV (overrides [data] path)")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="dggd-cure", description="Bayesian cure-fraction survival models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model family")
    _common(p)
    p.add_argument("--family", choices=["dggd", "gompertz", "weibull-mixture"])
    p.add_argument("--draws", action="store_true", help="also write every posterior draw")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("-n", type=int, help="number of subjects")

    p = sub.add_parser("mc-study", help="Monte-Carlo calibration study")
    _common(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--sizes", help="comma-separated sample sizes")

    p = sub.add_parser("diagnose", help="residuals and predictive criteria")
    _common(p)
    p.add_argument("--family", choices=["dggd", "gompertz", "weibull-mixture"])
    p.add_argument("--draws-file", help="reuse a draws CSV written by 'fit --draws'")

    p = sub.add_parser("compare", help="compare model families")
    _common(p)
    p.add_argument("--families", help="comma-separated families (overrides [model] families)")

    p = sub.add_parser("km", help="Kaplan-Meier estimate")
    _common(p)
    return parser


# helpers -------------------------------------------------------------------------


def _config(args):
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        seed=args.seed, out=args.out, exclude=args.exclude, chains=args.chains, warmup=args.warmup, samples=args.samples
    )
    if args.data:
        cfg = replace(cfg, data=replace(cfg.data, path=args.data))
    return cfg


def _load(cfg):
    if not cfg.data.path:
        raise ValidationError("no input data: set [data] path or pass --data")
    return load_dataset(cfg.data.path, cfg.data.time, cfg.data.event, cfg.data.covariates, cfg.data.exclude)


def _out(cfg):
    path = Path(cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fit(cfg, data, family):
    result = fit_model(data, family, cfg.priors, cfg.sampler)
    if result.draws.n_divergent:
        logger.warning("%s: %d divergent transitions after warm-up", family, result.draws.n_divergent)
    return result


def _fit_meta(cfg, data, result):
    d = result.draws
    return {
        "family": result.family,
        "n": data.n,
        "events": int(data.event.sum()),
        "excluded": list(cfg.data.exclude),
        "chains": d.n_chains,
        "draws_per_chain": d.n_draws,
        "warmup": cfg.sampler.warmup_iters,
        "seed": cfg.sampler.seed,
        "divergent": d.n_divergent,
        "step_size": [float(s) for s in d.step_size],
        "max_rhat": float(np.max(d.rhat())),
        "min_ess": float(np.min(d.ess())),
    }


def _read_draws(path, model):
    frame = pd.read_csv(path)
    missing = [c for c in model.param_names if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: draws file lacks column(s) {', '.join(missing)}")
    return frame[model.param_names].to_numpy(dtype=float)


def _criteria(model, theta):
    """DIC, -2 LPML and PSIS-LOO for one fitted model."""
    L = pointwise_loglik(model, theta)
    _, log_cpo = cpo(L)
    loo = psis_loo(L)
    return L, log_cpo, loo, dic(model, theta)


# subcommands -----------------------------------------------------------------------


def cmd_fit(args):
    cfg = _config(args)
    family = args.family or cfg.family
    data = _load(cfg)
    result = _fit(cfg, data, family)
    out = _out(cfg)
    write_csv(result.draws.summary(), out / "summary.csv")
    write_json(_fit_meta(cfg, data, result), out / "fit.json")
    if args.draws or cfg.write_draws:
        write_csv(result.draws.to_frame(), out / "draws.csv", float_format="%.17g")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config(args)
    sim = cfg.simulate
    true = TrueModel(sim.get("beta", (-1.0, 0.5, 0.5)), sim.get("alpha", -2.0), sim.get("psi", 2.0))
    n = args.n or sim.get("n", 1000)
    data = generate_dataset(true, n, np.random.SeedSequence(cfg.sampler.seed))
    frame = pd.DataFrame({"time": data.time, "event": data.event, "x1": data.X[:, 1].astype(int), "x2": data.X[:, 2]})
    write_csv(frame, _out(cfg) / "simulated.csv", float_format="%.17g")
    return EXIT_OK


def cmd_mc_study(args):
    cfg = _config(args)
    st = cfg.study
    sim = cfg.simulate
    true = TrueModel(sim.get("beta", (-1.0, 0.5, 0.5)), sim.get("alpha", -2.0), sim.get("psi", 2.0))
    sampler = SamplerConfig(
        chains=args.chains or st.get("chains", 2),
        warmup_iters=args.warmup if args.warmup is not None else st.get("warmup", 500),
        sampling_iters=args.samples or st.get("samples", 500),
        target_accept=cfg.sampler.target_accept,
        max_tree_depth=cfg.sampler.max_tree_depth,
    )
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else st.get("sample_sizes", (100, 300, 500, 1000))
    study = StudyConfig(
        sample_sizes=sizes,
        replicates=args.replicates or st.get("replicates", 100),
        true_model=true,
        sampler=sampler,
        seed=cfg.sampler.seed,
        priors=cfg.priors,
        n_jobs=st.get("n_jobs", 1),
    )
    result = run_study(study)
    out = _out(cfg)
    write_csv(result.table, out / "study.csv")
    write_csv(result.replicates, out / "replicates.csv")
    write_json(
        {
            "table": result.table.to_dict(orient="records"),
            "failed": result.failures.to_dict(orient="records"),
            "replicates": study.replicates,
            "sample_sizes": list(study.sample_sizes),
            "seed": study.seed,
        },
        out / "study.json",
    )
    return EXIT_OK


def cmd_diagnose(args):
    cfg = _config(args)
    family = args.family or cfg.family
    data = _load(cfg)
    if args.draws_file:
        model = make_model(family, data, cfg.priors)
        theta = _read_draws(args.draws_file, model)
    else:
        result = _fit(cfg, data, family)
        model, theta = result.model, result.draws.flat()
    L, log_cpo, loo, dic_res = _criteria(model, theta)
    res = residuals(model, theta)
    res["index"] = res["index"] + 1
    out = _out(cfg)
    write_csv(res, out / "residuals.csv")
    pointwise = pd.DataFrame(
        {"index": np.arange(1, data.n + 1), "log_cpo": log_cpo, "k_hat": loo.pareto_k, "tier": loo.tiers}
    )
    write_csv(pointwise, out / "pointwise.csv")
    flags = flag_observations(res["r_D"], loo.pareto_k)
    flags["index"] = flags["index"] + 1
    write_csv(flags, out / "flags.csv")
    lp = lpml(log_cpo)
    write_json(
        {
            "family": family,
            "lpml": lp,
            "minus2_lpml": -2.0 * lp,
            "dic": dic_res.dic,
            "dic_standard": dic_res.dic_standard,
            "p_d": dic_res.p_d,
            "d_bar": dic_res.d_bar,
            "elpd_loo": loo.elpd,
            "minus2_elpd_loo": loo.looic,
            "k_tiers": loo.tier_counts(),
            "flagged": int(len(flags)),
        },
        out / "diagnostics.json",
    )
    return EXIT_OK


def cmd_compare(args):
    cfg = _config(args)
    families = tuple(f.strip() for f in args.families.split(",")) if args.families else cfg.families
    if len(families) < 2:
        raise ValidationError("compare requires at least two models")
    for f in families:
        if f not in ("dggd", "gompertz", "weibull-mixture"):
            raise ValidationError(f"unknown model family {f!r}")
    data = _load(cfg)
    rows = []
    for family in families:
        result = _fit(cfg, data, family)
        _, log_cpo, loo, dic_res = _criteria(result.model, result.draws.flat())
        counts = loo.tier_counts()
        row = {
            "model": family,
            "DIC": dic_res.dic,
            "PSIS-LOO": loo.looic,
            "-2LPML": -2.0 * lpml(log_cpo),
            "DIC_standard": dic_res.dic_standard,
            "p_D": dic_res.p_d,
        }
        for name, _ in K_TIERS:
            row[f"k_{name.replace(' ', '_')}"] = counts[name]
        row["divergent"] = result.draws.n_divergent
        rows.append(row)
    table = pd.DataFrame(rows)
    for col in ("DIC", "PSIS-LOO", "-2LPML"):
        table[f"best_{col}"] = table[col] == table[col].min()
    out = _out(cfg)
    write_csv(table, out / "comparison.csv")
    write_json(
        {
            "models": table.to_dict(orient="records"),
            "dic_variant": "D_bar + p_D/2 (DIC_standard column holds D_bar + p_D)",
            "seed": cfg.sampler.seed,
        },
        out / "comparison.json",
    )
    return EXIT_OK


def cmd_km(args):
    cfg = _config(args)
    data = _load(cfg)
    write_csv(kaplan_meier(data).to_frame(), _out(cfg) / "km.csv")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "mc-study": cmd_mc_study,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
    "km": cmd_km,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except SamplerError as exc:
        print(f"error: sampler failure: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except (ValidationError, SimulationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
