"""Noise-schedule endpoint bounds from posterior covariance contraction.

For a zero-mean Gaussian signal with covariance ``C`` observed under
isotropic noise of variance ``sigma^2``, the posterior covariance is

    Phi(C; sigma) = C - C (C + sigma^2 I)^{-1} C,

which shares eigenvectors with ``C`` and maps each signal eigenvalue
``nu`` to ``nu * sigma^2 / (nu + sigma^2)``.  Two one-sided comparisons
of such maps give principled schedule endpoints:

* start: the information the initialization is still missing about the
  unobserved band, ``C (C + sigma^2 I)^{-1} C``, drops below a fraction
  ``tau_max`` of that band's covariance once ``sigma^2`` exceeds
  ``(1 - tau_max) / tau_max * nu_max``;
* stop: the extra posterior spread caused by optimizing at noise level
  ``sigma`` on top of an intrinsic floor ``sigma_s^2`` stays below a
  fraction ``tau_min`` of the floor posterior whenever ``sigma^2`` is at
  most ``kappa = tau_min sigma_s^2 (nu_max + sigma_s^2) /
  (nu_max - tau_min sigma_s^2)`` (no constraint at all when
  ``nu_max <= tau_min sigma_s^2``).

All bounds are stated for the largest eigenvalue ``nu_max`` because the
per-mode inequalities are monotone in ``nu``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ToleranceParams",
    "StopBoundResult",
    "NoiseSchedule",
    "posterior_map",
    "residual_start",
    "start_bound",
    "residual_stop",
    "stop_bound",
    "build_schedule",
    "loewner_leq",
]


@dataclass(frozen=True)
class ToleranceParams:
    """Relative contraction tolerances, both strictly inside (0, 1)."""

    tau_max: float
    tau_min: float

    def __post_init__(self) -> None:
        for name, tau in (("tau_max", self.tau_max), ("tau_min", self.tau_min)):
            if not 0.0 < tau < 1.0:
                raise ValueError(f"{name} must lie strictly in (0, 1), got {tau}")


@dataclass(frozen=True)
class StopBoundResult:
    """Stop-side bound on ``sigma^2``; ``kappa is None`` marks a vacuous case."""

    kappa: float | None

    @property
    def vacuous(self) -> bool:
        return self.kappa is None


def _eig_psd(cov: np.ndarray, name: str = "cov") -> tuple[np.ndarray, np.ndarray]:
    """Validate a symmetric PSD matrix and return its eigendecomposition."""
    mat = np.asarray(cov, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.abs(mat).max()))
    if np.abs(mat - mat.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric within 1e-12 relative tolerance")
    sym = 0.5 * (mat + mat.T)
    nu, q = np.linalg.eigh(sym)
    floor = -1e-10 * max(1.0, float(nu.max(initial=0.0)))
    if nu.min(initial=0.0) < floor:
        raise ValueError(
            f"{name} is not positive semidefinite: min eigenvalue {nu.min():.3e}"
        )
    return np.clip(nu, 0.0, None), q


def _check_sigma_sq(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0.0:
        raise ValueError(f"{name} must be a finite non-negative real, got {value}")
    return value


def posterior_map(cov: np.ndarray, sigma: float) -> np.ndarray:
    """Posterior covariance ``C - C (C + sigma^2 I)^{-1} C``.

    Eigenvalues map to ``nu sigma^2 / (nu + sigma^2)``; the noiseless
    limit ``sigma = 0`` therefore returns the zero matrix.
    """
    sigma = _check_sigma_sq(sigma, "sigma")
    nu, q = _eig_psd(cov)
    s2 = sigma**2
    denom = nu + s2
    vals = np.divide(nu * s2, denom, out=np.zeros_like(nu), where=denom > 0)
    return (q * vals) @ q.T


def residual_start(cov_hl: np.ndarray, sigma: float) -> np.ndarray:
    """Missing-information matrix ``C (C + sigma^2 I)^{-1} C``.

    Per eigenvalue this is ``nu^2 / (nu + sigma^2)``: equal to ``C`` at
    ``sigma = 0`` and decaying to zero as ``sigma`` grows.
    """
    sigma = _check_sigma_sq(sigma, "sigma")
    nu, q = _eig_psd(cov_hl, "cov_hl")
    denom = nu + sigma**2
    vals = np.divide(nu * nu, denom, out=np.zeros_like(nu), where=denom > 0)
    return (q * vals) @ q.T


def start_bound(nu_max: float, tau_max: float) -> float:
    """Smallest ``sigma^2`` with ``residual_start <= tau_max * C``.

    Returns ``(1 - tau_max) / tau_max * nu_max``.
    """
    nu_max = float(nu_max)
    if not np.isfinite(nu_max) or nu_max <= 0.0:
        raise ValueError(f"nu_max must be positive, got {nu_max}")
    if not 0.0 < tau_max < 1.0:
        raise ValueError(f"tau_max must lie strictly in (0, 1), got {tau_max}")
    return (1.0 - tau_max) / tau_max * nu_max


def residual_stop(cov_s: np.ndarray, sigma_s_sq: float, sigma: float) -> np.ndarray:
    """Extra posterior spread ``Phi(C; sqrt(sigma_s^2 + sigma^2)) - Phi(C; sigma_s)``.

    Per eigenvalue: ``nu t / (nu + t) - nu sigma_s^2 / (nu + sigma_s^2)``
    with ``t = sigma_s^2 + sigma^2``; always PSD and zero at ``sigma = 0``.
    """
    sigma_s_sq = _check_sigma_sq(sigma_s_sq, "sigma_s_sq")
    sigma = _check_sigma_sq(sigma, "sigma")
    nu, q = _eig_psd(cov_s, "cov_s")
    t = sigma_s_sq + sigma**2
    hi = np.divide(nu * t, nu + t, out=np.zeros_like(nu), where=(nu + t) > 0)
    lo = np.divide(
        nu * sigma_s_sq,
        nu + sigma_s_sq,
        out=np.zeros_like(nu),
        where=(nu + sigma_s_sq) > 0,
    )
    return (q * (hi - lo)) @ q.T


def stop_bound(nu_max: float, sigma_s_sq: float, tau_min: float) -> StopBoundResult:
    """Largest ``sigma^2`` keeping ``residual_stop <= tau_min * Phi(C; sigma_s)``.

    Non-vacuous exactly when ``nu_max > tau_min * sigma_s_sq``, in which
    case ``kappa = tau_min sigma_s^2 (nu_max + sigma_s^2) /
    (nu_max - tau_min sigma_s^2)``.  At high signal-to-floor ratios this
    approaches ``tau_min * sigma_s^2``.
    """
    nu_max = float(nu_max)
    if not np.isfinite(nu_max) or nu_max <= 0.0:
        raise ValueError(f"nu_max must be positive, got {nu_max}")
    sigma_s_sq = _check_sigma_sq(sigma_s_sq, "sigma_s_sq")
    if not 0.0 < tau_min < 1.0:
        raise ValueError(f"tau_min must lie strictly in (0, 1), got {tau_min}")
    if nu_max <= tau_min * sigma_s_sq:
        return StopBoundResult(kappa=None)
    kappa = tau_min * sigma_s_sq * (nu_max + sigma_s_sq) / (nu_max - tau_min * sigma_s_sq)
    return StopBoundResult(kappa=float(kappa))


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing positive noise levels, ``sigma_max`` first."""

    sigmas: np.ndarray

    def __post_init__(self) -> None:
        sig = np.asarray(self.sigmas, dtype=np.float64)
        if sig.ndim != 1 or sig.size < 2:
            raise ValueError("schedule needs at least two noise levels")
        if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
            raise ValueError("noise levels must be finite and positive")
        if np.any(np.diff(sig) >= 0):
            raise ValueError("noise levels must be strictly decreasing")
        object.__setattr__(self, "sigmas", sig)

    def __len__(self) -> int:
        return self.sigmas.size

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[0])

    @property
    def sigma_min(self) -> float:
        return float(self.sigmas[-1])

    def sigma_for_step(self, k: int, n_steps: int) -> float:
        """Resample to ``n_steps`` levels by index rounding.

        A single-step run uses the largest level.
        """
        if not 0 <= k < n_steps:
            raise ValueError(f"step index {k} outside [0, {n_steps})")
        if n_steps == 1:
            return float(self.sigmas[0])
        pos = k * (len(self) - 1) / (n_steps - 1)
        return float(self.sigmas[int(np.floor(pos + 0.5))])

    def to_csv(self, path) -> None:
        lines = ["index,sigma"]
        lines += [f"{i},{float(s)!r}" for i, s in enumerate(self.sigmas)]
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "NoiseSchedule":
        with open(path) as fh:
            rows = [line.strip() for line in fh if line.strip()]
        if not rows or rows[0] != "index,sigma":
            raise ValueError(f"{path}: expected header 'index,sigma'")
        sigmas = [float(row.split(",")[1]) for row in rows[1:]]
        return cls(sigmas=np.asarray(sigmas))


def build_schedule(
    sigma_min: float, sigma_max: float, n_steps: int, rho: float = 7.0
) -> NoiseSchedule:
    """Power-interpolated schedule between ``sigma_max`` and ``sigma_min``.

    ``sigmas[i] = (sigma_max^(1/rho) + i/(n-1) * (sigma_min^(1/rho) -
    sigma_max^(1/rho)))^rho``; the endpoints are pinned exactly.
    ``rho = 1`` gives linear spacing; larger ``rho`` concentrates steps
    at small noise levels.
    """
    sigma_min = float(sigma_min)
    sigma_max = float(sigma_max)
    if not (np.isfinite(sigma_min) and np.isfinite(sigma_max)):
        raise ValueError("schedule endpoints must be finite")
    if sigma_min <= 0:
        raise ValueError(f"sigma_min must be positive, got {sigma_min}")
    if sigma_min >= sigma_max:
        raise ValueError(
            f"sigma_min must be smaller than sigma_max, got {sigma_min} >= {sigma_max}"
        )
    n_steps = int(n_steps)
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    if not np.isfinite(rho) or rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    frac = np.arange(n_steps) / (n_steps - 1)
    lo, hi = sigma_min ** (1.0 / rho), sigma_max ** (1.0 / rho)
    sigmas = (hi + frac * (lo - hi)) ** rho
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    return NoiseSchedule(sigmas=sigmas)


def loewner_leq(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> bool:
    """Whether ``a <= b`` in the Loewner (PSD) order, up to ``tol``.

    True when the smallest eigenvalue of ``b - a`` is at least
    ``-tol * max(1, ||b||)`` with the spectral norm of ``b``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need equal square shapes, got {a.shape} and {b.shape}")
    if tol < 0:
        raise ValueError(f"tol must be non-negative, got {tol}")
    diff = b - a
    diff = 0.5 * (diff + diff.T)
    min_eig = float(np.linalg.eigvalsh(diff)[0])
    b_sym = 0.5 * (b + b.T)
    b_norm = float(np.max(np.abs(np.linalg.eigvalsh(b_sym))))
    return min_eig >= -tol * max(1.0, b_norm)
