"""Benchmark harness: metrics, phantoms, persistence, configs, CLI."""

from optdiff.bench.metrics import MetricResult, evaluate_metrics, psnr, ssim

__all__ = ["MetricResult", "evaluate_metrics", "psnr", "ssim"]
