#!/usr/bin/env python3
"""Transferability sweeps for the tolerance-parameterized knobs.

Three experiments on small synthetic undersampled-DFT problems, each
writing one CSV of normalized PSNR curves:

  start:  sweep the top noise level via the start tolerance vs via a
          raw variance, across two calibration widths;
  stop:   sweep the bottom noise level via the stop tolerance vs via a
          raw variance, across two measurement-noise floors 100x apart;
  lambda: sweep the balance weight in normalized vs raw-linear form,
          across three step intervals.

In each case the tolerance/normalized argmax should line up across
conditions while the raw argmax tracks the condition.

Usage:
    python3 scripts/run_sweeps.py --out runs/sweeps [--which start stop lambda]
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from optdiff import linops, tuning
from optdiff._rng import make_rng
from optdiff.priors import GaussianPrior
from optdiff.schedule import build_schedule
from optdiff.tuning import (
    SweepSetup,
    TuningSet,
    invariance_sweep_lambda,
    invariance_sweep_schedule,
)

SHAPE = (16, 16)
SWEEP_TEMPLATE = dict(
    lambda_hat=1.0, alpha_hat=0.05, alpha_decay=True, noise_instances=8
)


def lorentzian(amplitude, knee, power, floor=0.0):
    def fn(r):
        return amplitude / (1.0 + (r / knee) ** power) + floor

    return fn


def stationary_prior(profile, mean_seed=None):
    fy = np.fft.fftshift(np.fft.fftfreq(SHAPE[0]))
    fx = np.fft.fftshift(np.fft.fftfreq(SHAPE[1]))
    spectrum = profile(np.hypot(fy[:, None], fx[None, :]))
    mean = np.zeros(SHAPE[0] * SHAPE[1])
    if mean_seed is not None:
        mean = GaussianPrior.stationary(mean, 8.0 * spectrum, SHAPE).sample(
            make_rng(mean_seed)
        )
    return GaussianPrior.stationary(mean, spectrum, SHAPE)


def dft_tuning_set(prior, r, calib, eta_var, seed=3, n_problems=5):
    problems = []
    for i in range(n_problems):
        x_star = prior.sample(make_rng(seed, stream=200 + i))
        mask = linops.make_mask("random", SHAPE[0], r, calib, seed=seed + i)
        op = linops.SubsampledDFT(mask, SHAPE)
        problems.append(
            linops.simulate_measurement(op, x_star, eta_var, seed=seed + 50 + i)
        )
    return TuningSet(problems=tuple(problems), prior=prior, shape=SHAPE)


def sweep_start(out):
    profile = lorentzian(2.0, 0.04, 4.0)
    prior = stationary_prior(profile, mean_seed=8)
    setups = []
    # pure-calibration masks: the acquired band edge, and with it the
    # largest un-acquired spectral value, is set by the width alone
    for calib, edge_row in ((2, 2), (8, 5)):
        ts = dft_tuning_set(prior, r=16 // calib, calib=calib, eta_var=1e-6)
        setups.append(
            SweepSetup(
                name=f"calib-{calib}", ts=ts,
                nu_max=float(profile(edge_row / 16.0)),
                sigma_s_sq=1e-6, sigma_fixed=0.002,
            )
        )
    res = invariance_sweep_schedule(
        setups, list(tuning.DEFAULT_TAU_VALUES), list(np.geomspace(1e-4, 1e1, 16)),
        endpoint="start", n_steps=24, config_template=SWEEP_TEMPLATE, seed=0,
    )
    res.to_csv(out / "sweep_start.csv")
    return res, [s.name for s in setups]


def sweep_stop(out):
    setups = []
    for floor in (1e-4, 1e-2):
        prior = stationary_prior(lorentzian(2.0, 0.05, 4.0))
        ts = dft_tuning_set(prior, r=2, calib=4, eta_var=floor)
        setups.append(
            SweepSetup(
                name=f"floor-{floor:g}", ts=ts, nu_max=2.0,
                sigma_s_sq=floor, sigma_fixed=3.0,
            )
        )
    res = invariance_sweep_schedule(
        setups, list(tuning.DEFAULT_TAU_VALUES), list(np.geomspace(1e-8, 1e-1, 22)),
        endpoint="stop", n_steps=24, config_template=SWEEP_TEMPLATE, seed=0,
    )
    res.to_csv(out / "sweep_stop.csv")
    return res, [s.name for s in setups]


def sweep_lambda(out):
    prior = stationary_prior(lorentzian(2.0, 0.04, 4.0, 1e-4), mean_seed=8)
    ts = dft_tuning_set(prior, r=2, calib=4, eta_var=1e-4)
    intervals = [(0, 4), (4, 8), (8, 12)]
    res = invariance_sweep_lambda(
        ts, build_schedule(0.01, 3.0, 12), list(tuning.DEFAULT_LAMBDA_VALUES),
        intervals, seed=0, noise_instances=4,
    )
    res.to_csv(out / "sweep_lambda.csv")
    return res, [f"steps[{a}:{b})" for a, b in intervals]


def report(res, names, parameterizations):
    for par in parameterizations:
        argmaxes = {name: res.argmax_value(name, par) for name in names}
        cells = ", ".join(f"{k}: {v:.4g}" for k, v in argmaxes.items())
        print(f"  {par:9s} argmax  {cells}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument(
        "--which", nargs="+", default=["start", "stop", "lambda"],
        choices=["start", "stop", "lambda"],
    )
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    drivers = {"start": sweep_start, "stop": sweep_stop, "lambda": sweep_lambda}
    axes = {
        "start": ("tau", "sigma_sq"),
        "stop": ("tau", "sigma_sq"),
        "lambda": ("invariant", "linear"),
    }
    for which in args.which:
        print(f"{which} sweep:")
        res, names = drivers[which](args.out)
        report(res, names, axes[which])
    print(f"wrote CSVs to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
