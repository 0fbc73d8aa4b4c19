"""Linear measurement operators and inverse-problem simulation.

All operators act on flattened 2-D images (row-major) and expose
``apply`` / ``adjoint`` as real-linear maps, so complex measurements are
represented as stacked real/imaginary blocks.  Every concrete operator
here has operator norm at most one.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from optdiff._rng import make_rng

__all__ = [
    "LinearOperator",
    "MatrixOperator",
    "SamplingMask",
    "make_mask",
    "SubsampledDFT",
    "GaussianBlur",
    "Decimate",
    "Inpaint",
    "InverseProblem",
    "simulate_measurement",
    "operator_norm",
    "to_dense",
]

MASK_KINDS = ("random", "equispaced")


class LinearOperator(ABC):
    """Real-linear map from R^n (flattened images) to R^m."""

    n: int
    m: int

    @property
    def dims(self) -> tuple[int, int]:
        return (self.n, self.m)

    def _check_in(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.size != self.n:
            raise ValueError(f"expected {self.n} input entries, got {arr.size}")
        return arr.reshape(self.n)

    def _check_out(self, y: np.ndarray) -> np.ndarray:
        arr = np.asarray(y, dtype=np.float64)
        if arr.size != self.m:
            raise ValueError(f"expected {self.m} measurement entries, got {arr.size}")
        return arr.reshape(self.m)

    @abstractmethod
    def apply(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def adjoint(self, y: np.ndarray) -> np.ndarray: ...

    def gram(self, x: np.ndarray) -> np.ndarray:
        """``A^T A x`` (default composition; subclasses may specialize)."""
        return self.adjoint(self.apply(x))


class MatrixOperator(LinearOperator):
    """Dense matrix wrapper, mostly for small exact cross-checks."""

    def __init__(self, mat: np.ndarray):
        self.mat = np.asarray(mat, dtype=np.float64)
        if self.mat.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got shape {self.mat.shape}")
        self.m, self.n = self.mat.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.mat @ self._check_in(x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.mat.T @ self._check_out(y)


# ------------------------------------------------------------------- masking


@dataclass(frozen=True)
class SamplingMask:
    """Kept k-space line indices (rows of the unshifted DFT grid)."""

    kind: str
    r: int
    calib: int
    seed: int
    h: int
    kept: np.ndarray

    def __post_init__(self) -> None:
        kept = np.asarray(self.kept, dtype=np.int64)
        if kept.ndim != 1 or kept.size == 0:
            raise ValueError("mask must keep at least one line")
        if np.any(kept < 0) or np.any(kept >= self.h):
            raise ValueError(f"line indices must lie in [0, {self.h})")
        if np.any(np.diff(np.sort(kept)) == 0):
            raise ValueError("duplicate line indices")
        object.__setattr__(self, "kept", np.sort(kept))

    @property
    def n_kept(self) -> int:
        return self.kept.size

    def to_csv(self, path) -> None:
        lines = [
            "kind,R,calib,seed",
            f"{self.kind},{self.r},{self.calib},{self.seed}",
            "index",
        ]
        lines += [str(int(i)) for i in self.kept]
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, h: int) -> "SamplingMask":
        with open(path) as fh:
            rows = [line.strip() for line in fh if line.strip()]
        if len(rows) < 4 or rows[0] != "kind,R,calib,seed" or rows[2] != "index":
            raise ValueError(f"{path}: malformed mask file")
        kind, r, calib, seed = rows[1].split(",")
        kept = np.asarray([int(v) for v in rows[3:]], dtype=np.int64)
        return cls(
            kind=kind, r=int(r), calib=int(calib), seed=int(seed), h=int(h), kept=kept
        )


def _calibration_rows(h: int, calib: int) -> np.ndarray:
    """Center-of-k-space rows: centered frequencies in [-calib//2, calib - calib//2)."""
    freqs = np.arange(-(calib // 2), calib - calib // 2)
    return np.sort(freqs % h)


def make_mask(kind: str, h: int, r: int, calib: int, seed: int) -> SamplingMask:
    """Draw a line sampling mask at acceleration ``r``.

    The total budget is ``round(h / r)`` lines.  Calibration lines (the
    ``calib`` center rows) are always kept; the remaining budget is
    filled uniformly at random or equispaced over the other rows.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"kind must be one of {MASK_KINDS}, got {kind!r}")
    h, r, calib = int(h), int(r), int(calib)
    if h < 1 or r < 1:
        raise ValueError(f"need h >= 1 and r >= 1, got h={h}, r={r}")
    if not 0 <= calib <= h:
        raise ValueError(f"calib must lie in [0, {h}], got {calib}")
    budget = int(round(h / r))
    if budget < 1:
        raise ValueError(f"acceleration {r} leaves no line budget for h={h}")
    if budget < calib:
        raise ValueError(
            f"budget {budget} (= round(h/r)) cannot cover {calib} calibration lines"
        )
    calib_rows = _calibration_rows(h, calib)
    extra = budget - calib
    others = np.setdiff1d(np.arange(h), calib_rows)
    if extra > 0:
        if kind == "random":
            rng = make_rng(seed, stream=11)
            chosen = rng.choice(others, size=extra, replace=False)
        else:
            positions = (np.arange(extra) * others.size) // extra
            chosen = others[positions]
        kept = np.concatenate([calib_rows, chosen])
    else:
        kept = calib_rows
    return SamplingMask(kind=kind, r=r, calib=calib, seed=seed, h=h, kept=kept)


class SubsampledDFT(LinearOperator):
    """Unitary 2-D DFT of a real image restricted to kept k-space lines.

    Real images carry Hermitian-symmetric spectra, so a kept line ``u``
    pins down line ``-u mod H`` as well; the operator measures the
    symmetric completion of the mask (each completed row once, real and
    imaginary parts stacked).  This makes ``A^T A`` an exact orthogonal
    projector onto the measured frequency set for *any* input mask.
    """

    def __init__(self, mask: SamplingMask, shape: tuple[int, int]):
        h, w = int(shape[0]), int(shape[1])
        if mask.h != h:
            raise ValueError(f"mask is for {mask.h} lines, image has {h} rows")
        self.mask = mask
        self.shape = (h, w)
        completed = np.union1d(mask.kept, (-mask.kept) % h)
        self.rows = completed.astype(np.int64)
        self.n = h * w
        self.m = 2 * self.rows.size * w

    def apply(self, x: np.ndarray) -> np.ndarray:
        arr = self._check_in(x).reshape(self.shape)
        coef = np.fft.fft2(arr, norm="ortho")[self.rows, :]
        return np.concatenate([coef.real.ravel(), coef.imag.ravel()])

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        arr = self._check_out(y)
        half = self.m // 2
        coef = (arr[:half] + 1j * arr[half:]).reshape(self.rows.size, self.shape[1])
        grid = np.zeros(self.shape, dtype=np.complex128)
        grid[self.rows, :] = coef
        return np.fft.ifft2(grid, norm="ortho").real.ravel()


class GaussianBlur(LinearOperator):
    """Circular convolution with a normalized sampled Gaussian kernel."""

    def __init__(self, shape: tuple[int, int], kernel_size: int = 3, kernel_var: float = 25.0):
        h, w = int(shape[0]), int(shape[1])
        kernel_size = int(kernel_size)
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
        if kernel_size > min(h, w):
            raise ValueError(
                f"kernel_size {kernel_size} exceeds image extent {min(h, w)}"
            )
        if kernel_var <= 0:
            raise ValueError(f"kernel_var must be positive, got {kernel_var}")
        self.shape = (h, w)
        self.n = self.m = h * w
        half = kernel_size // 2
        offs = np.arange(-half, half + 1)
        taps = np.exp(-(offs[:, None] ** 2 + offs[None, :] ** 2) / (2.0 * kernel_var))
        self.kernel = taps / taps.sum()
        embedded = np.zeros(self.shape)
        for i, du in enumerate(offs):
            for j, dv in enumerate(offs):
                embedded[du % h, dv % w] += self.kernel[i, j]
        # symmetric kernel -> real transfer function -> exactly self-adjoint
        self.transfer = np.fft.fft2(embedded).real

    def apply(self, x: np.ndarray) -> np.ndarray:
        arr = self._check_in(x).reshape(self.shape)
        return np.fft.ifft2(np.fft.fft2(arr) * self.transfer).real.ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.apply(y)


class Decimate(LinearOperator):
    """Block-average downsampling by an integer factor."""

    def __init__(self, shape: tuple[int, int], factor: int):
        h, w = int(shape[0]), int(shape[1])
        factor = int(factor)
        if factor < 1:
            raise ValueError(f"factor must be >= 1, got {factor}")
        if h % factor or w % factor:
            raise ValueError(f"shape {shape} is not divisible by factor {factor}")
        self.shape = (h, w)
        self.factor = factor
        self.out_shape = (h // factor, w // factor)
        self.n = h * w
        self.m = self.out_shape[0] * self.out_shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        arr = self._check_in(x).reshape(self.shape)
        f = self.factor
        return arr.reshape(self.out_shape[0], f, self.out_shape[1], f).mean(
            axis=(1, 3)
        ).ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        arr = self._check_out(y).reshape(self.out_shape)
        f = self.factor
        up = np.repeat(np.repeat(arr, f, axis=0), f, axis=1)
        return (up / f**2).ravel()


class Inpaint(LinearOperator):
    """Identity restricted to observed pixels (``missing`` marks the gap)."""

    def __init__(self, shape: tuple[int, int], missing: np.ndarray):
        h, w = int(shape[0]), int(shape[1])
        miss = np.asarray(missing, dtype=bool)
        if miss.shape != (h, w):
            raise ValueError(f"missing mask shape {miss.shape} != image shape {(h, w)}")
        if miss.all():
            raise ValueError("every pixel is missing: empty measurement")
        self.shape = (h, w)
        self.missing = miss
        self.keep_flat = np.flatnonzero(~miss.ravel())
        self.n = h * w
        self.m = self.keep_flat.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._check_in(x)[self.keep_flat]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.keep_flat] = self._check_out(y)
        return out


# ------------------------------------------------------------------ problems


@dataclass
class InverseProblem:
    """A measurement ``y = A x_star + noise`` plus simulation metadata."""

    op: LinearOperator
    y: np.ndarray
    eta_var: float
    x_star: np.ndarray | None = None
    mask: SamplingMask | None = None
    name: str = ""

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.y.size != self.op.m:
            raise ValueError(
                f"measurement has {self.y.size} entries, operator yields {self.op.m}"
            )
        if self.eta_var < 0:
            raise ValueError(f"eta_var must be non-negative, got {self.eta_var}")
        if self.x_star is not None:
            self.x_star = np.asarray(self.x_star, dtype=np.float64).ravel()
            if self.x_star.size != self.op.n:
                raise ValueError(
                    f"ground truth has {self.x_star.size} entries, expected {self.op.n}"
                )


def simulate_measurement(
    op: LinearOperator, x_star: np.ndarray, eta_var: float, seed: int
) -> InverseProblem:
    """Forward-simulate ``y = A x_star + N(0, eta_var)`` with a pinned seed."""
    x_star = np.asarray(x_star, dtype=np.float64).ravel()
    clean = op.apply(x_star)
    if eta_var < 0:
        raise ValueError(f"eta_var must be non-negative, got {eta_var}")
    if eta_var > 0:
        noise = make_rng(seed, stream=1).normal(0.0, np.sqrt(eta_var), size=op.m)
        y = clean + noise
    else:
        y = clean
    mask = getattr(op, "mask", None)
    return InverseProblem(op=op, y=y, eta_var=float(eta_var), x_star=x_star, mask=mask)


# ----------------------------------------------------------------- utilities


def operator_norm(op: LinearOperator, n_iter: int = 50, seed: int = 0) -> float:
    """Spectral norm estimate by power iteration on ``A^T A``."""
    rng = make_rng(seed, stream=13)
    v = rng.normal(size=op.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = op.gram(v)
        norm = float(np.linalg.norm(w))
        if norm <= 1e-300:
            return 0.0
        lam = float(v @ w)
        v = w / norm
    return float(np.sqrt(max(lam, 0.0)))


def to_dense(op: LinearOperator) -> np.ndarray:
    """Materialize a small operator as an (m, n) matrix."""
    if op.n * op.m > 4_000_000:
        raise ValueError(f"operator too large to densify: dims {op.dims}")
    cols = np.empty((op.m, op.n))
    basis = np.zeros(op.n)
    for j in range(op.n):
        basis[j] = 1.0
        cols[:, j] = op.apply(basis)
        basis[j] = 0.0
    return cols
