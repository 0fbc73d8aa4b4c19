"""Analytic priors with closed-form denoisers and scores.

Two families are supported, both exact (no learned components):

* :class:`GaussianPrior` — ``N(m, C)`` where ``C`` is diagonal in a
  known basis: the coordinate basis, the 2-D unitary DFT of an image
  grid (stationary covariance defined by a per-frequency spectrum), or
  an explicit dense matrix for small dimensions.
* :class:`GmmPrior` — mixture of isotropic Gaussians.

For any prior, the minimum-MSE denoiser at noise level ``sigma``
relates to the score of the smoothed density by

    denoise(x, sigma) = x + sigma^2 * score(x, sigma),

and the noise-prediction form used by the sampler is
``epsilon_hat(x, sigma) = (x - denoise(x, sigma)) / sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "GaussianPrior",
    "GmmPrior",
    "denoise",
    "score",
    "epsilon_hat",
    "gaussian_posterior_mean",
]

_DENSE_LIMIT = 64


def _flat(x: np.ndarray, n: int, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size != n:
        raise ValueError(f"{name} has {arr.size} entries, prior lives on {n}")
    return arr.reshape(n)


def _hermitian_symmetrize(spec: np.ndarray) -> np.ndarray:
    """Average a spectrum with its reflection so the covariance is real."""
    reflected = np.roll(np.flip(spec), shift=(1, 1), axis=(0, 1))
    return 0.5 * (spec + reflected)


class GaussianPrior:
    """Gaussian prior ``N(mean, C)`` with ``C`` diagonal in a known basis."""

    def __init__(
        self,
        mean: np.ndarray,
        *,
        eigenvalues: np.ndarray | None = None,
        spectrum: np.ndarray | None = None,
        shape: tuple[int, int] | None = None,
        cov: np.ndarray | None = None,
    ):
        given = sum(arg is not None for arg in (eigenvalues, spectrum, cov))
        if given != 1:
            raise ValueError("provide exactly one of eigenvalues, spectrum, cov")
        self.mean = np.asarray(mean, dtype=np.float64).ravel()
        n = self.mean.size
        if spectrum is not None:
            if shape is None or shape[0] * shape[1] != n:
                raise ValueError("a stationary prior needs shape matching the mean")
            spec = np.asarray(spectrum, dtype=np.float64)
            if spec.shape != tuple(shape):
                raise ValueError(
                    f"spectrum shape {spec.shape} does not match grid {shape}"
                )
            if not np.all(np.isfinite(spec)) or np.any(spec < 0):
                raise ValueError("spectrum must be finite and non-negative")
            # spectrum arrives DC-centered (plotting layout); store unshifted
            self.kind = "dft"
            self.shape = tuple(shape)
            self._nu = _hermitian_symmetrize(np.fft.ifftshift(spec))
        elif eigenvalues is not None:
            ev = np.asarray(eigenvalues, dtype=np.float64).ravel()
            if ev.size != n:
                raise ValueError(f"need {n} eigenvalues, got {ev.size}")
            if not np.all(np.isfinite(ev)) or np.any(ev < 0):
                raise ValueError("eigenvalues must be finite and non-negative")
            self.kind = "identity"
            self.shape = None
            self._nu = ev
        else:
            mat = np.asarray(cov, dtype=np.float64)
            if mat.shape != (n, n):
                raise ValueError(f"cov must be ({n}, {n}), got {mat.shape}")
            if n > _DENSE_LIMIT:
                raise ValueError(
                    f"dense covariance limited to n <= {_DENSE_LIMIT}, got {n}"
                )
            scale = max(1.0, float(np.abs(mat).max()))
            if np.abs(mat - mat.T).max() > 1e-12 * scale:
                raise ValueError("cov must be symmetric")
            nu, q = np.linalg.eigh(0.5 * (mat + mat.T))
            if nu.min() < -1e-10 * max(1.0, nu.max()):
                raise ValueError(f"cov is not PSD: min eigenvalue {nu.min():.3e}")
            self.kind = "dense"
            self.shape = None
            self._nu = np.clip(nu, 0.0, None)
            self._q = q

    # -- constructors ------------------------------------------------------

    @classmethod
    def diagonal(cls, mean: np.ndarray, eigenvalues: np.ndarray) -> "GaussianPrior":
        return cls(mean, eigenvalues=eigenvalues)

    @classmethod
    def stationary(
        cls, mean: np.ndarray, spectrum: np.ndarray, shape: tuple[int, int]
    ) -> "GaussianPrior":
        """Stationary image prior: covariance diagonalized by the 2-D DFT.

        ``spectrum`` is the DC-centered per-frequency power map, exactly
        the quantity :func:`optdiff.spectral.periodogram` estimates.
        """
        return cls(mean, spectrum=spectrum, shape=shape)

    @classmethod
    def dense(cls, mean: np.ndarray, cov: np.ndarray) -> "GaussianPrior":
        return cls(mean, cov=cov)

    # -- mode-space plumbing ----------------------------------------------

    @property
    def n(self) -> int:
        return self.mean.size

    @property
    def nu_max(self) -> float:
        return float(self._nu.max())

    def _to_modes(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "dft":
            return np.fft.fft2(x.reshape(self.shape), norm="ortho")
        if self.kind == "dense":
            return self._q.T @ x
        return x

    def _from_modes(self, modes: np.ndarray) -> np.ndarray:
        if self.kind == "dft":
            return np.fft.ifft2(modes, norm="ortho").real.ravel()
        if self.kind == "dense":
            return self._q @ modes
        return modes

    def _apply_gains(self, x: np.ndarray, gains: np.ndarray) -> np.ndarray:
        return self._from_modes(gains * self._to_modes(x))

    def cov_apply(self, x: np.ndarray) -> np.ndarray:
        """Multiply by the prior covariance."""
        return self._apply_gains(_flat(x, self.n), self._nu)

    # -- estimation interface ----------------------------------------------

    def denoise(self, x_t: np.ndarray, sigma: float) -> np.ndarray:
        """Posterior mean given ``x_t = x0 + sigma * noise``.

        Shrinks each covariance mode by ``nu / (nu + sigma^2)``; modes
        with zero prior variance return the prior mean.
        """
        sigma = float(sigma)
        if sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        arr = _flat(x_t, self.n, "x_t")
        denom = self._nu + sigma**2
        gains = np.divide(
            self._nu, denom, out=np.zeros_like(self._nu), where=denom > 0
        )
        out = self.mean + self._apply_gains(arr - self.mean, gains)
        return out.reshape(np.asarray(x_t).shape)

    def score(self, x_t: np.ndarray, sigma: float) -> np.ndarray:
        """Gradient of ``log p_sigma`` at ``x_t``: ``-(C + sigma^2 I)^{-1}(x_t - m)``."""
        sigma = float(sigma)
        if sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        denom = self._nu + sigma**2
        if np.any(denom <= 0):
            raise ValueError(
                "smoothed covariance is singular: sigma = 0 with a zero eigenvalue"
            )
        arr = _flat(x_t, self.n, "x_t")
        out = -self._apply_gains(arr - self.mean, 1.0 / denom)
        return out.reshape(np.asarray(x_t).shape)

    def epsilon_hat(self, x_t: np.ndarray, sigma: float) -> np.ndarray:
        """Predicted noise ``(x_t - denoise(x_t, sigma)) / sigma``."""
        sigma = float(sigma)
        if sigma <= 0:
            raise ValueError(f"epsilon_hat needs sigma > 0, got {sigma}")
        return (np.asarray(x_t, dtype=np.float64) - self.denoise(x_t, sigma)) / sigma

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one exact sample from the prior."""
        white = rng.normal(size=self.n)
        return self.mean + self._apply_gains(white, np.sqrt(self._nu))


@dataclass(frozen=True)
class GmmPrior:
    """Mixture of isotropic Gaussians ``sum_k w_k N(m_k, v_k I)``."""

    means: np.ndarray  # (K, n)
    variances: np.ndarray  # (K,)
    weights: np.ndarray  # (K,)

    def __post_init__(self) -> None:
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        variances = np.asarray(self.variances, dtype=np.float64).ravel()
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        k = means.shape[0]
        if variances.shape != (k,) or weights.shape != (k,):
            raise ValueError(
                f"got {k} means but {variances.size} variances / {weights.size} weights"
            )
        if np.any(variances <= 0) or not np.all(np.isfinite(variances)):
            raise ValueError("component variances must be positive and finite")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to one")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def log_responsibilities(self, x_t: np.ndarray, sigma: float) -> np.ndarray:
        """Log posterior component probabilities under noise ``sigma``."""
        sigma = float(sigma)
        if sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        arr = _flat(x_t, self.n, "x_t")
        s = self.variances + sigma**2
        sq = np.sum((arr[None, :] - self.means) ** 2, axis=1)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        logp = log_w - 0.5 * self.n * np.log(2.0 * np.pi * s) - 0.5 * sq / s
        return logp - logsumexp(logp)

    def denoise(self, x_t: np.ndarray, sigma: float) -> np.ndarray:
        """Responsibility-weighted component posterior means.

        Each component contributes ``(sigma^2 m_k + v_k x_t) / (v_k +
        sigma^2)``; at ``sigma = 0`` every term collapses to ``x_t``.
        """
        arr = _flat(x_t, self.n, "x_t")
        gamma = np.exp(self.log_responsibilities(arr, sigma))
        s = self.variances + float(sigma) ** 2
        posts = (
            float(sigma) ** 2 * self.means + self.variances[:, None] * arr[None, :]
        ) / s[:, None]
        out = gamma @ posts
        return out.reshape(np.asarray(x_t).shape)

    def score(self, x_t: np.ndarray, sigma: float) -> np.ndarray:
        """Exact mixture score ``sum_k gamma_k (m_k - x_t) / (v_k + sigma^2)``."""
        arr = _flat(x_t, self.n, "x_t")
        gamma = np.exp(self.log_responsibilities(arr, sigma))
        s = self.variances + float(sigma) ** 2
        out = (gamma / s) @ (self.means - arr[None, :])
        return out.reshape(np.asarray(x_t).shape)

    def epsilon_hat(self, x_t: np.ndarray, sigma: float) -> np.ndarray:
        sigma = float(sigma)
        if sigma <= 0:
            raise ValueError(f"epsilon_hat needs sigma > 0, got {sigma}")
        return (np.asarray(x_t, dtype=np.float64) - self.denoise(x_t, sigma)) / sigma

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        k = int(rng.choice(self.n_components, p=self.weights))
        return self.means[k] + np.sqrt(self.variances[k]) * rng.normal(size=self.n)


# ------------------------------------------------------------ free functions


def denoise(prior, x_t: np.ndarray, sigma: float) -> np.ndarray:
    return prior.denoise(x_t, sigma)


def score(prior, x_t: np.ndarray, sigma: float) -> np.ndarray:
    return prior.score(x_t, sigma)


def epsilon_hat(prior, x_t: np.ndarray, sigma: float) -> np.ndarray:
    return prior.epsilon_hat(x_t, sigma)


# ----------------------------------------------------- linear-Gaussian oracle


def _dense_system(matvec, rhs: np.ndarray) -> np.ndarray:
    m = rhs.size
    mat = np.empty((m, m))
    basis = np.zeros(m)
    for j in range(m):
        basis[j] = 1.0
        mat[:, j] = matvec(basis)
        basis[j] = 0.0
    mat = 0.5 * (mat + mat.T)
    # least-squares solve doubles as the pseudo-inverse branch when the
    # measurement Gram matrix is singular (e.g. noiseless rank-deficient A)
    sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
    return sol


def _conjugate_gradient(matvec, rhs: np.ndarray, tol: float, max_iter: int):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = float(r @ r)
    target = tol * max(1.0, float(np.linalg.norm(rhs)))
    if np.sqrt(rs) <= target:
        return x, True
    for _ in range(max_iter):
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            return x, False
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= target:
            return x, True
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, False


def gaussian_posterior_mean(
    prior: GaussianPrior, op, y: np.ndarray, eta_var: float
) -> np.ndarray:
    """Exact posterior mean for a Gaussian prior and linear measurements.

    Solves ``(A C A^T + eta_var I) z = y - A m`` and returns
    ``m + C A^T z``.  Small systems are solved densely (falling back to
    the pseudo-inverse when singular); larger ones use conjugate
    gradients to a 1e-12 residual.
    """
    if not isinstance(prior, GaussianPrior):
        raise TypeError("gaussian_posterior_mean requires a GaussianPrior")
    eta_var = float(eta_var)
    if eta_var < 0:
        raise ValueError(f"eta_var must be non-negative, got {eta_var}")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != op.m:
        raise ValueError(f"measurement has {y.size} entries, operator yields {op.m}")
    rhs = y - op.apply(prior.mean)

    def matvec(z: np.ndarray) -> np.ndarray:
        return op.apply(prior.cov_apply(op.adjoint(z))) + eta_var * z

    m = rhs.size
    if m <= 600:
        z = _dense_system(matvec, rhs)
    else:
        z, converged = _conjugate_gradient(matvec, rhs, tol=1e-12, max_iter=10 * m)
        if not converged:
            if m > 4096:
                raise np.linalg.LinAlgError(
                    "conjugate gradients stalled on a system too large "
                    "for the dense fallback"
                )
            z = _dense_system(matvec, rhs)
    return prior.mean + prior.cov_apply(op.adjoint(z))
