"""optdiff: analytic-prior diffusion optimizers for linear inverse problems.

The package is organized bottom-up:

* :mod:`optdiff.spectral` — radially averaged PSD estimation,
* :mod:`optdiff.schedule` — posterior-contraction bounds and noise schedules,
* :mod:`optdiff.priors` — closed-form Gaussian / Gaussian-mixture denoisers,
* :mod:`optdiff.linops` — measurement operators and problem simulation,
* :mod:`optdiff.sampler` — scale-invariant plug-and-play descent,
* :mod:`optdiff.optimal` — oracle step sizes via tiny exact NNLS,
* :mod:`optdiff.tuning` — grid searches and invariance sweeps,
* :mod:`optdiff.bench` — metrics, phantoms, file formats, CLI.
"""

from optdiff._rng import make_rng

__version__ = "0.1.0"

__all__ = ["make_rng", "__version__"]
