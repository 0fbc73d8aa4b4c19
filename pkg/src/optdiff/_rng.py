"""Seeded random number generation.

Every stochastic routine in the package draws from a generator produced
here.  The backing bit generator is Philox (counter based), so a
``(seed, stream)`` pair pins down the full sequence and distinct pairs
give statistically independent streams without any sequential coupling.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng"]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return the Philox generator identified by ``(seed, stream)``.

    Parameters
    ----------
    seed : int
        Non-negative experiment seed.
    stream : int, optional
        Sub-stream index, used to derive independent generators for
        e.g. per-problem noise without consuming draws from the parent.
    """
    seed = int(seed)
    stream = int(stream)
    if seed < 0 or stream < 0:
        raise ValueError(f"seed and stream must be non-negative, got ({seed}, {stream})")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
