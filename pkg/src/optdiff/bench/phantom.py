"""Synthetic test images: power-law noise fields and geometric scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from optdiff._rng import make_rng

__all__ = ["PowerLaw", "ShapeScene", "make_phantom"]


@dataclass(frozen=True)
class PowerLaw:
    """Gaussian field whose radial PSD falls off as ``r**-exponent``."""

    exponent: float

    def __post_init__(self) -> None:
        if self.exponent <= 0:
            raise ValueError(f"exponent must be positive, got {self.exponent}")


@dataclass(frozen=True)
class ShapeScene:
    """Overlapping ellipses and rectangles with seeded placement."""

    n_shapes: int = 6


def _power_law_field(shape: tuple[int, int], exponent: float, rng) -> np.ndarray:
    h, w = shape
    white = rng.normal(size=(h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    r = np.hypot(fy, fx)
    # PSD ~ r**-e means the spectral amplitude scales as r**(-e/2)
    amp = np.zeros_like(r)
    nonzero = r > 0
    amp[nonzero] = r[nonzero] ** (-exponent / 2.0)
    field = np.fft.ifft2(np.fft.fft2(white) * amp).real
    return field


def _shape_scene(shape: tuple[int, int], n_shapes: int, rng) -> np.ndarray:
    h, w = shape
    yy = np.arange(h)[:, None]
    xx = np.arange(w)[None, :]
    img = np.zeros((h, w))
    for _ in range(n_shapes):
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        ay, ax = rng.uniform(0.05, 0.25) * h, rng.uniform(0.05, 0.25) * w
        level = rng.uniform(0.2, 1.0)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ay) & (np.abs(xx - cx) <= ax)
        img[mask] += level
    return img


def make_phantom(kind, shape: tuple[int, int], seed: int = 0) -> np.ndarray:
    """Generate a [0, 1]-valued test image of the requested ``kind``.

    The same ``(kind, shape, seed)`` always yields the identical image.
    """
    h, w = int(shape[0]), int(shape[1])
    rng = make_rng(seed, stream=7)
    if isinstance(kind, PowerLaw):
        img = _power_law_field((h, w), kind.exponent, rng)
    elif isinstance(kind, ShapeScene):
        img = _shape_scene((h, w), kind.n_shapes, rng)
    else:
        raise TypeError(f"unknown phantom kind: {kind!r}")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        img = (img - lo) / (hi - lo)
    else:
        img = np.zeros((h, w))
    return img
