"""Perturbed-leader draws and geometric resampling shared by the FPL players."""

from __future__ import annotations

import numpy as np

_FIRST_BATCH = 8
_MAX_BATCH = 1 << 15


def perturbed_leader(
    estimates: np.ndarray,
    eta: float,
    gamma: float,
    rng: np.random.Generator,
    size: int = 1,
    offset: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``size`` independent FPL choices.

    Each choice explores uniformly with probability ``gamma``; otherwise it is
    ``argmax(estimates - z - offset)`` with ``z ~ Exponential(mean=eta)`` per arm.
    ``offset`` is the switching-cost row for switch-aware players. Ties go to
    the lowest index (``np.argmax`` semantics).
    """
    n = estimates.shape[0]
    explore = rng.random(size) < gamma
    uniform = rng.integers(0, n, size=size)
    z = rng.exponential(eta, size=(size, n))
    score = estimates - z
    if offset is not None:
        score -= offset
    picks = np.argmax(score, axis=1)
    return np.where(explore, uniform, picks)


def geometric_resample(simulate, chosen: int, cap: int) -> int:
    """Index of the first simulated draw equal to ``chosen``, or ``cap`` if none.

    ``simulate(k)`` must return ``k`` fresh draws from the same distribution
    that produced ``chosen``. Draws are requested in growing batches; the
    returned count is the same as resimulating one draw at a time.
    """
    done = 0
    batch = _FIRST_BATCH
    while done < cap:
        k = min(batch, cap - done)
        hits = np.flatnonzero(simulate(k) == chosen)
        if hits.size:
            return done + int(hits[0]) + 1
        done += k
        batch = min(batch * 2, _MAX_BATCH)
    return cap
