"""Experiment orchestration: build problems from a config, run them, and
persist reconstructions, traces, metrics, and summaries.

Every artifact is written with deterministic content (repr floats, no
timestamps), so rerunning the same config and seed reproduces each file
byte for byte.  Per-seed work may run on a thread pool; files are always
written in seed order from the main thread.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass

import numpy as np

from optdiff import sampler
from optdiff import schedule as sched_mod
from optdiff import tuning
from optdiff._rng import make_rng
from optdiff.bench import arrayio
from optdiff.bench.configfile import ExperimentConfig, format_config
from optdiff.bench.metrics import psnr, ssim
from optdiff.linops import (
    Decimate,
    GaussianBlur,
    Inpaint,
    SubsampledDFT,
    make_mask,
    simulate_measurement,
)
from optdiff.priors import GaussianPrior, GmmPrior
from optdiff.spectral import (
    estimate_noise_floor,
    hf_spectrum,
    periodogram,
    radial_average,
)

__all__ = [
    "build_prior",
    "build_problem",
    "build_schedule_for",
    "sampler_config_from",
    "estimate_prior_psd",
    "run_experiment",
    "ablate",
]


# ---------------------------------------------------------------- builders


def _radial_spectrum(config: ExperimentConfig) -> np.ndarray:
    h, w = config.shape
    fy = np.fft.fftshift(np.fft.fftfreq(h))
    fx = np.fft.fftshift(np.fft.fftfreq(w))
    rr = np.hypot(fy[:, None], fx[None, :])
    amp, knee, power = config["prior.amplitude"], config["prior.knee"], config["prior.power"]
    return amp / (1.0 + (rr / knee) ** power) + config["prior.floor"]


def build_prior(config: ExperimentConfig):
    """Construct the prior the config describes (stationary or GMM)."""
    h, w = config.shape
    n = h * w
    spectrum = _radial_spectrum(config)
    if config["prior.kind"] == "stationary":
        mean = np.zeros(n)
        scale = config["prior.mean_scale"]
        if scale != 0.0:
            draw = GaussianPrior.stationary(mean, spectrum, (h, w))
            mean = scale * draw.sample(make_rng(config["prior.seed"], stream=11))
        return GaussianPrior.stationary(mean, spectrum, (h, w))
    k = config["prior.components"]
    base = GaussianPrior.stationary(np.zeros(n), spectrum, (h, w))
    means = np.stack(
        [base.sample(make_rng(config["prior.seed"], stream=20 + i)) for i in range(k)]
    )
    return GmmPrior(
        means=means,
        variances=np.full(k, config["prior.variance"]),
        weights=np.full(k, 1.0 / k),
    )


def _build_operator(config: ExperimentConfig, seed: int):
    h, w = config.shape
    task = config.task
    if task == "mri":
        mask = make_mask(
            config["mask.kind"], h, config["mask.accel"], config["mask.calib"], seed=seed
        )
        return SubsampledDFT(mask, (h, w))
    if task == "deblur":
        return GaussianBlur((h, w), config["blur.size"], config["blur.variance"])
    if task == "sr":
        return Decimate((h, w), config["sr.factor"])
    rng = make_rng(seed, stream=13)
    missing = rng.random((h, w)) < config["inpaint.fraction"]
    if missing.all():
        missing.flat[0] = False
    return Inpaint((h, w), missing)


def build_problem(config: ExperimentConfig, prior, seed: int):
    """Draw ground truth from the prior and simulate its measurement."""
    x_star = prior.sample(make_rng(seed, stream=200))
    op = _build_operator(config, seed)
    return simulate_measurement(op, x_star, config["noise.eta_var"], seed=seed)


def estimate_prior_psd(prior, shape, n_samples: int = 8, seed: int = 0):
    """Radial PSD of the prior, averaged over seeded sample periodograms."""
    h, w = shape
    acc = np.zeros((h, w))
    for i in range(n_samples):
        x = prior.sample(make_rng(seed, stream=100 + i)).reshape(h, w)
        acc += periodogram(x)
    return radial_average(acc / n_samples, min(h, w) // 2)


def build_schedule_for(config: ExperimentConfig, prior):
    """Explicit endpoints straight from the config, or tolerance-derived
    endpoints from the prior's estimated radial PSD."""
    n_steps = config["sampler.steps"]
    rho = config["schedule.rho"]
    if config["schedule.source"] == "explicit":
        return sched_mod.build_schedule(
            config["schedule.sigma_min"], config["schedule.sigma_max"], n_steps, rho=rho
        )
    psd = estimate_prior_psd(prior, config.shape, seed=config["prior.seed"])
    nu_start = float(np.max(hf_spectrum(psd, config["schedule.lf_cutoff"])))
    nu_stop = float(np.max(psd.values[psd.present]))
    # the schedule cannot resolve detail below the measurement noise, so
    # the stop floor is the larger of the PSD tail and eta_var
    floor = max(estimate_noise_floor(psd).sigma_s_sq, config["noise.eta_var"])
    endpoints = tuning.derive_endpoints(
        nu_start, nu_stop, floor, config["schedule.tau_max"], config["schedule.tau_min"]
    )
    if endpoints is None:
        raise ValueError(
            "derived schedule is infeasible for this prior/noise combination"
        )
    sigma_max, sigma_min = endpoints
    return sched_mod.build_schedule(sigma_min, sigma_max, n_steps, rho=rho)


def sampler_config_from(
    config: ExperimentConfig, seed: int, **overrides
) -> sampler.SamplerConfig:
    """Translate the config's sampler section into a ``SamplerConfig``."""
    mode_kind = config["sampler.lambda_mode"]
    optimal = mode_kind == "optimal"
    momentum = config["sampler.momentum"]
    if momentum == "none":
        beta = None
    elif momentum == "optimal":
        beta = "optimal"
    else:
        beta = float(momentum)
    kwargs = dict(
        n_steps=config["sampler.steps"],
        lambda_mode=sampler.LambdaMode(
            "invariant" if optimal else mode_kind, config["sampler.lambda_hat"]
        ),
        noise_instances=config["sampler.noise_instances"],
        alpha_hat=config["sampler.alpha_hat"],
        alpha_decay=config["sampler.alpha_decay"],
        momentum_beta=beta,
        precondition="auto" if config["sampler.precondition"] else None,
        optimal_weights=optimal,
        seed=seed,
        init=config["sampler.init"],
    )
    kwargs.update(overrides)
    return sampler.SamplerConfig(**kwargs)


# ------------------------------------------------------------------ running


@dataclass
class SeedOutcome:
    seed: int
    mu: np.ndarray | None
    x_star: np.ndarray | None
    trace: list | None
    psnr_db: float
    ssim: float
    error: str | None = None


def _metric_peak(config: ExperimentConfig):
    return 1.0 if config["metrics.peak"] == "unit" else None


def _solve_seed(config, prior, schedule, seed: int, **overrides) -> SeedOutcome:
    try:
        problem = build_problem(config, prior, seed)
        cfg = sampler_config_from(config, seed, **overrides)
        mu, trace = sampler.run(problem, prior, schedule, cfg)
        shape = config.shape
        peak = _metric_peak(config)
        img, gt = mu.reshape(shape), problem.x_star.reshape(shape)
        p = psnr(img, gt, peak)
        s = ssim(img, gt, peak) if min(shape) >= 11 else float("nan")
        return SeedOutcome(seed, img, gt, trace, p, s)
    except Exception as exc:  # noqa: BLE001 - runner must survive bad cells
        return SeedOutcome(seed, None, None, None, float("nan"), float("nan"), str(exc))


def _solve_many(config, prior, schedule, seeds, jobs: int, **overrides):
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(
                pool.map(
                    lambda s: _solve_seed(config, prior, schedule, s, **overrides),
                    seeds,
                )
            )
    return [_solve_seed(config, prior, schedule, s, **overrides) for s in seeds]


def _write_lines(path, lines) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_atomic(path, lines) -> None:
    tmp = f"{path}.tmp"
    _write_lines(tmp, lines)
    os.replace(tmp, path)


def _summary_lines(psnrs, ssims) -> list[str]:
    header = "n,mean_psnr,std_psnr,mean_ssim,std_ssim"
    if len(psnrs) == 0:
        return [header, "0,nan,nan,nan,nan"]
    row = (
        f"{len(psnrs)},{float(np.mean(psnrs))!r},{float(np.std(psnrs))!r},"
        f"{float(np.mean(ssims))!r},{float(np.std(ssims))!r}"
    )
    return [header, row]


def _write_manifest(out_dir, files, failed) -> None:
    status = "ok" if not failed else "partial"
    lines = [f"status = {status}", f"files = {','.join(sorted(files))}"]
    if failed:
        lines.append(f"failed_seeds = {','.join(str(s) for s in sorted(failed))}")
    _write_lines(os.path.join(out_dir, "manifest.txt"), lines)


def run_experiment(config: ExperimentConfig, out_dir, jobs: int = 1) -> int:
    """Solve one problem per seed and write all artifacts under ``out_dir``.

    Returns 0 when every seed succeeded; 1 when any failed (the manifest
    then carries ``status = partial`` plus the failing seeds).
    """
    os.makedirs(out_dir, exist_ok=True)
    prior = build_prior(config)
    schedule = build_schedule_for(config, prior)
    outcomes = _solve_many(config, prior, schedule, config.seeds, jobs)

    files = ["config.txt", "manifest.txt", "metrics.csv", "summary.csv"]
    metric_rows = ["seed,psnr_db,ssim"]
    ok: list[SeedOutcome] = []
    failed: list[int] = []
    for out in outcomes:
        if out.error is not None:
            failed.append(out.seed)
            continue
        ok.append(out)
        metric_rows.append(f"{out.seed},{out.psnr_db!r},{out.ssim!r}")
        recon = f"recon_seed{out.seed}.opd"
        truth = f"truth_seed{out.seed}.opd"
        trace = f"trace_seed{out.seed}.csv"
        arrayio.save_array(os.path.join(out_dir, recon), out.mu)
        arrayio.save_array(os.path.join(out_dir, truth), out.x_star)
        sampler.trace_to_csv(out.trace, os.path.join(out_dir, trace))
        files += [recon, truth, trace]

    _write_lines(os.path.join(out_dir, "metrics.csv"), metric_rows)
    _write_atomic(
        os.path.join(out_dir, "summary.csv"),
        _summary_lines([o.psnr_db for o in ok], [o.ssim for o in ok]),
    )
    with open(os.path.join(out_dir, "config.txt"), "w", newline="") as fh:
        fh.write(format_config(config))
    _write_manifest(out_dir, files, failed)
    return 0 if not failed else 1


# ----------------------------------------------------------------- ablation


def ablation_cells(config: ExperimentConfig) -> list[tuple[str, dict]]:
    """The optimizer/NFE comparison grid, anchored at the config's steps.

    Momentum and preconditioning are compared at the base step count.
    The NFE-matched pair spends a 5x evaluation budget either on noise
    instances or on extra steps; the extra-steps cell scales the step
    size down by the same factor so both cells hold the total step
    budget fixed and differ only in how evaluations are allocated.
    """
    steps = config["sampler.steps"]
    momentum = config["sampler.momentum"]
    beta = 0.5 if momentum == "none" else momentum
    if beta not in ("optimal",):
        beta = float(beta)
    alpha = config["sampler.alpha_hat"]
    return [
        ("vanilla", dict(n_steps=steps)),
        ("momentum", dict(n_steps=steps, momentum_beta=beta)),
        ("precond", dict(n_steps=steps, precondition="auto")),
        (f"nfe_{steps}x5", dict(n_steps=steps, noise_instances=5)),
        (f"nfe_{5 * steps}x1", dict(n_steps=5 * steps, alpha_hat=alpha / 5.0)),
    ]


def ablate(config: ExperimentConfig, out_dir, jobs: int = 1) -> int:
    """Run the optimizer/NFE grid and persist per-cell metrics.

    ``ablation_metrics.csv`` has one row per (cell, seed) and
    ``ablation.csv`` one summary row per cell with the NFE column.
    """
    os.makedirs(out_dir, exist_ok=True)
    prior = build_prior(config)
    schedule = build_schedule_for(config, prior)

    metric_rows = ["cell,seed,psnr_db,ssim"]
    summary_rows = ["cell,steps,instances,nfe,mean_psnr,std_psnr"]
    failed: list[int] = []
    for name, overrides in ablation_cells(config):
        outcomes = _solve_many(config, prior, schedule, config.seeds, jobs, **overrides)
        scores = []
        for out in outcomes:
            if out.error is not None:
                failed.append(out.seed)
                continue
            scores.append(out.psnr_db)
            metric_rows.append(f"{name},{out.seed},{out.psnr_db!r},{out.ssim!r}")
        steps = overrides.get("n_steps", config["sampler.steps"])
        instances = overrides.get("noise_instances", config["sampler.noise_instances"])
        mean = float(np.mean(scores)) if scores else float("nan")
        std = float(np.std(scores)) if scores else float("nan")
        summary_rows.append(
            f"{name},{steps},{instances},{steps * instances},{mean!r},{std!r}"
        )

    _write_lines(os.path.join(out_dir, "ablation_metrics.csv"), metric_rows)
    _write_atomic(os.path.join(out_dir, "ablation.csv"), summary_rows)
    with open(os.path.join(out_dir, "config.txt"), "w", newline="") as fh:
        fh.write(format_config(config))
    files = ["ablation.csv", "ablation_metrics.csv", "config.txt", "manifest.txt"]
    _write_manifest(out_dir, files, failed)
    return 0 if not failed else 1
