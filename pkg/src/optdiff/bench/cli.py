"""Command-line entry points for schedules, solves, tuning, sweeps, and
the property-check suite.

Every file-writing subcommand is deterministic for a fixed config and
seed; rerunning reproduces each CSV and array file byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from optdiff import tuning, verification
from optdiff.bench.configfile import ConfigError, load_config
from optdiff.bench.runner import (
    ablate,
    build_prior,
    build_problem,
    build_schedule_for,
    estimate_prior_psd,
    run_experiment,
)
from optdiff.tuning import (
    GridSpec,
    SweepSetup,
    TuningSet,
    invariance_sweep_lambda,
    invariance_sweep_schedule,
    tune_noise_schedule,
    tune_sampler,
)

__all__ = ["main"]


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="experiment config file")
    sub.add_argument("--seed", type=int, default=None, help="base seed (default: $OPTDIFF_SEED or 0)")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--jobs", type=int, default=1, help="worker threads for per-seed runs")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("OPTDIFF_SEED", "0"))


def _need_config(args):
    if not args.config:
        raise ConfigError("this subcommand requires --config")
    return load_config(args.config)


def _need_out(args) -> str:
    out = args.out
    if not out and args.config:
        out = load_config(args.config)["run.out"]
    if not out:
        raise ConfigError("this subcommand requires --out (or run.out in the config)")
    os.makedirs(out, exist_ok=True)
    return out


def _make_tuning_set(config, base_seed: int) -> TuningSet:
    prior = build_prior(config)
    problems = tuple(
        build_problem(config, prior, base_seed + i) for i in range(config["run.problems"])
    )
    return TuningSet(problems=problems, prior=prior, shape=config.shape)


def _equal_intervals(n_steps: int, k: int) -> list[tuple[int, int]]:
    if not 1 <= k <= n_steps:
        raise ConfigError(f"sweep.intervals must lie in [1, {n_steps}], got {k}")
    edges = np.linspace(0, n_steps, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


# -------------------------------------------------------------- subcommands


def cmd_schedule(args) -> int:
    config = _need_config(args)
    prior = build_prior(config)
    schedule = build_schedule_for(config, prior)
    n = config["sampler.steps"]
    lines = ["k,sigma"] + [f"{k},{schedule.sigma_for_step(k, n)!r}" for k in range(n)]
    for line in lines:
        print(line)
    if args.out:
        out = _need_out(args)
        with open(os.path.join(out, "schedule.csv"), "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def cmd_solve(args) -> int:
    config = _need_config(args)
    out = _need_out(args)
    code = run_experiment(config, out, jobs=args.jobs)
    with open(os.path.join(out, "summary.csv")) as fh:
        print(fh.read().rstrip())
    return code


def cmd_tune_schedule(args) -> int:
    config = _need_config(args)
    out = _need_out(args)
    seed = _resolve_seed(args)
    ts = _make_tuning_set(config, seed)
    psd = estimate_prior_psd(ts.prior, config.shape, seed=config["prior.seed"])
    report = tune_noise_schedule(
        ts, psd, None, config["sampler.steps"],
        lf_cutoff=config["schedule.lf_cutoff"], seed=seed,
    )
    report.to_csv(os.path.join(out, "tune_schedule.csv"))
    best = report.argmax
    print(f"best tau_max={best.cell[0]} tau_min={best.cell[1]} psnr={best.mean_psnr:.3f}")
    return 0


def cmd_tune_sampler(args) -> int:
    config = _need_config(args)
    out = _need_out(args)
    seed = _resolve_seed(args)
    ts = _make_tuning_set(config, seed)
    schedule = build_schedule_for(config, ts.prior)
    report = tune_sampler(ts, schedule, None, n_steps=config["sampler.steps"], seed=seed)
    report.to_csv(os.path.join(out, "tune_sampler.csv"))
    best = report.argmax
    print(f"best alpha_hat={best.cell[0]:.4g} lambda_hat={best.cell[1]:.4g} psnr={best.mean_psnr:.3f}")
    return 0


def cmd_sweep_lambda(args) -> int:
    config = _need_config(args)
    out = _need_out(args)
    seed = _resolve_seed(args)
    ts = _make_tuning_set(config, seed)
    schedule = build_schedule_for(config, ts.prior)
    intervals = _equal_intervals(config["sampler.steps"], config["sweep.intervals"])
    res = invariance_sweep_lambda(
        ts, schedule, tuning.DEFAULT_LAMBDA_VALUES, intervals,
        n_steps=config["sampler.steps"], seed=seed,
    )
    res.to_csv(os.path.join(out, "sweep_lambda.csv"))
    for a, b in intervals:
        best = res.argmax_value(f"steps[{a}:{b})", "invariant")
        print(f"steps[{a}:{b}) best normalized weight {best:.4g}")
    return 0


def cmd_sweep_schedule(args) -> int:
    config = _need_config(args)
    out = _need_out(args)
    seed = _resolve_seed(args)
    endpoint = config["sweep.endpoint"]
    prior = build_prior(config)
    psd = estimate_prior_psd(prior, config.shape, seed=config["prior.seed"])
    nu_max = float(np.max(psd.values[psd.present]))
    setups = []
    for floor in (1e-4, 1e-2):
        problems = tuple(
            build_problem(config.with_values({"noise.eta_var": floor}), prior, seed + i)
            for i in range(config["run.problems"])
        )
        ts = TuningSet(problems=problems, prior=prior, shape=config.shape)
        fixed = config["schedule.sigma_max"] if endpoint == "stop" else config["schedule.sigma_min"]
        setups.append(
            SweepSetup(
                name=f"floor-{floor:g}", ts=ts, nu_max=nu_max,
                sigma_s_sq=floor, sigma_fixed=fixed,
            )
        )
    sigma_grid = (
        np.geomspace(1e-8, 1e-1, 22) if endpoint == "stop" else np.geomspace(1e-4, 1e1, 16)
    )
    res = invariance_sweep_schedule(
        setups, tuning.DEFAULT_TAU_VALUES, sigma_grid, endpoint=endpoint,
        n_steps=config["sampler.steps"], seed=seed,
    )
    res.to_csv(os.path.join(out, "sweep_schedule.csv"))
    for s in setups:
        print(f"{s.name}: best tau {res.argmax_value(s.name, 'tau'):.4g}")
    return 0


def cmd_ablate(args) -> int:
    config = _need_config(args)
    out = _need_out(args)
    code = ablate(config, out, jobs=args.jobs)
    with open(os.path.join(out, "ablation.csv")) as fh:
        print(fh.read().rstrip())
    return code


def cmd_verify(args) -> int:
    results = verification.run_all_checks(seed=_resolve_seed(args), fast=args.fast)
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optdiff",
        description="Schedule bounds, scale-invariant samplers, tuning, and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands = [
        ("schedule", cmd_schedule, "print (and optionally save) the derived noise ladder"),
        ("solve", cmd_solve, "run one experiment config across its seeds"),
        ("tune-schedule", cmd_tune_schedule, "grid-search the tolerance pair on a tuning set"),
        ("tune-sampler", cmd_tune_sampler, "grid-search step size and balance weight"),
        ("sweep-lambda", cmd_sweep_lambda, "sweep balance weights per step interval"),
        ("sweep-schedule", cmd_sweep_schedule, "sweep schedule endpoints across noise floors"),
        ("ablate", cmd_ablate, "run the optimizer/NFE comparison grid"),
        ("verify", cmd_verify, "run the property-check suites"),
    ]
    for name, func, help_text in commands:
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)
        if name == "verify":
            p.add_argument(
                "--full", dest="fast", action="store_false",
                help="use the full (slow) sample counts",
            )
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
