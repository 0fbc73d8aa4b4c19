"""Radially averaged power spectral density estimation for 2-D fields.

Conventions used throughout:

* ``periodogram`` returns per-pixel power ``|DFT(img)|^2 / (H*W)`` with
  the DC bin shifted to the array center, so the sum of the power map
  equals the sum of squared pixel values (Parseval).
* Radial profiles live on the normalized frequency radius
  ``r = sqrt((u/H)^2 + (v/W)^2)`` which spans ``[0, sqrt(2)/2]``.
  Bins are uniform on that range; a grid point sitting exactly on a bin
  edge is assigned to the lower bin.
* Empty bins (no grid point falls inside) carry ``value = nan`` and
  ``count = 0``; they are never interpolated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RadialPSD",
    "NoiseFloorEstimate",
    "periodogram",
    "radial_average",
    "default_n_bins",
    "estimate_psd",
    "estimate_noise_floor",
    "hf_spectrum",
]

#: largest normalized radial frequency on any 2-D grid
R_MAX = math.sqrt(0.5)


def _as_image(img: np.ndarray, name: str = "img") -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class RadialPSD:
    """Radially averaged power spectrum.

    Attributes
    ----------
    bin_edges : ndarray, shape (n_bins + 1,)
        Monotonically increasing radial frequencies; bin ``i`` covers
        ``(bin_edges[i], bin_edges[i+1]]`` (edge points to the lower bin).
    values : ndarray, shape (n_bins,)
        Mean power per bin, ``nan`` for empty bins.
    counts : ndarray, shape (n_bins,)
        Number of grid points accumulated into each bin.
    """

    bin_edges: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("bin_edges must be 1-D with at least two entries")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing")
        n = edges.size - 1
        if values.shape != (n,) or counts.shape != (n,):
            raise ValueError(
                f"values/counts must have shape ({n},), got {values.shape} and {counts.shape}"
            )
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        with np.errstate(invalid="ignore"):
            if np.any(values[counts > 0] < 0):
                raise ValueError("power values must be non-negative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return self.bin_edges.size - 1

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def present(self) -> np.ndarray:
        """Boolean mask of bins that actually received grid points."""
        return self.counts > 0

    def to_csv(self, path) -> None:
        """Write ``bin_center,value,count`` rows (full float precision)."""
        lines = ["bin_center,value,count"]
        centers = self.bin_centers
        for i in range(self.n_bins):
            lines.append(
                f"{float(centers[i])!r},{float(self.values[i])!r},{int(self.counts[i])}"
            )
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RadialPSD":
        with open(path) as fh:
            rows = [line.strip() for line in fh if line.strip()]
        if not rows or rows[0] != "bin_center,value,count":
            raise ValueError(f"{path}: expected header 'bin_center,value,count'")
        centers, values, counts = [], [], []
        for row in rows[1:]:
            c, v, k = row.split(",")
            centers.append(float(c))
            values.append(float(v))
            counts.append(int(k))
        centers = np.asarray(centers)
        if centers.size == 1:
            width = 2.0 * centers[0]
        else:
            width = centers[1] - centers[0]
        edges = np.concatenate([[centers[0] - 0.5 * width], centers + 0.5 * width])
        edges[0] = max(edges[0], 0.0)
        return cls(bin_edges=edges, values=np.asarray(values), counts=np.asarray(counts))


@dataclass(frozen=True)
class NoiseFloorEstimate:
    """Flat spectral floor estimated from the high-frequency tail."""

    sigma_s_sq: float
    tail_fraction: float


def periodogram(img: np.ndarray) -> np.ndarray:
    """Per-pixel power spectrum ``|DFT(img)|^2 / (H*W)``, DC centered.

    The sum over all entries equals ``sum(img**2)`` up to roundoff.
    """
    arr = _as_image(img)
    coef = np.fft.fft2(arr)
    power = (coef.real**2 + coef.imag**2) / arr.size
    return np.fft.fftshift(power)


def _radius_grid(shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    fu = np.fft.fftshift(np.fft.fftfreq(h))
    fv = np.fft.fftshift(np.fft.fftfreq(w))
    return np.hypot(fu[:, None], fv[None, :])


def default_n_bins(shape: tuple[int, int]) -> int:
    """One bin per integer radius up to the Nyquist ring."""
    return int(math.ceil(min(shape) / 2))


def radial_average(spec: np.ndarray, n_bins: int | None = None) -> RadialPSD:
    """Average a DC-centered power spectrum over radial frequency bins.

    Bins are uniform on ``[0, sqrt(2)/2]``.  Every grid point lands in
    exactly one bin, so the counts sum to ``H*W``.
    """
    arr = _as_image(spec, "spec")
    if np.any(arr < 0):
        raise ValueError("power spectrum must be non-negative")
    if n_bins is None:
        n_bins = default_n_bins(arr.shape)
    n_bins = int(n_bins)
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")

    radius = _radius_grid(arr.shape)
    width = R_MAX / n_bins
    # interval (e_i, e_{i+1}] with r == e_i assigned to the lower bin
    idx = np.ceil(radius / width).astype(np.int64) - 1
    idx = np.clip(idx, 0, n_bins - 1)

    flat = idx.ravel()
    sums = np.bincount(flat, weights=arr.ravel(), minlength=n_bins)
    counts = np.bincount(flat, minlength=n_bins)
    values = np.full(n_bins, np.nan)
    present = counts > 0
    values[present] = sums[present] / counts[present]
    edges = np.linspace(0.0, R_MAX, n_bins + 1)
    return RadialPSD(bin_edges=edges, values=values, counts=counts)


def estimate_psd(images, n_bins: int | None = None) -> RadialPSD:
    """Welch-style PSD: average periodograms, then radially average."""
    imgs = list(images)
    if not imgs:
        raise ValueError("estimate_psd needs at least one image")
    first = _as_image(imgs[0], "images[0]")
    mean_power = periodogram(first)
    for i, img in enumerate(imgs[1:], start=1):
        arr = _as_image(img, f"images[{i}]")
        if arr.shape != first.shape:
            raise ValueError(
                f"images[{i}] has shape {arr.shape}, expected {first.shape}"
            )
        mean_power += periodogram(arr)
    mean_power /= len(imgs)
    return radial_average(mean_power, n_bins=n_bins)


def estimate_noise_floor(psd: RadialPSD, tail_fraction: float = 0.1) -> NoiseFloorEstimate:
    """Median power over the highest-frequency tail of a radial PSD.

    The tail is the last ``ceil(tail_fraction * n_bins)`` bins; empty
    bins inside the tail are skipped.
    """
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError(f"tail_fraction must be in (0, 1], got {tail_fraction}")
    n_tail = int(math.ceil(tail_fraction * psd.n_bins))
    tail_values = psd.values[-n_tail:]
    tail_counts = psd.counts[-n_tail:]
    usable = tail_values[tail_counts > 0]
    if usable.size == 0:
        raise ValueError(
            "all tail bins are empty; supply sigma_s_sq explicitly instead"
        )
    return NoiseFloorEstimate(
        sigma_s_sq=float(np.median(usable)), tail_fraction=float(tail_fraction)
    )


def hf_spectrum(psd: RadialPSD, lf_cutoff: float) -> np.ndarray:
    """Values of non-empty bins whose center radius exceeds ``lf_cutoff``.

    These are the covariance eigenvalues of the unobserved high band
    under the stationarity model, used to derive schedule endpoints.
    """
    if lf_cutoff < 0:
        raise ValueError(f"lf_cutoff must be non-negative, got {lf_cutoff}")
    keep = (psd.bin_centers > lf_cutoff) & psd.present
    if not np.any(keep):
        max_center = psd.bin_centers[psd.present].max() if np.any(psd.present) else np.nan
        raise ValueError(
            f"no populated bins beyond lf_cutoff={lf_cutoff} "
            f"(largest populated bin center: {max_center})"
        )
    return psd.values[keep].copy()
