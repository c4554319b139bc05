"""Depth-sensor corruption under lighting regimes.

Only the depth observation passes through here; dynamics, scandots and the
event camera (which reads true depth) never do.
"""

from __future__ import annotations

import numpy as np

from ..events.sim import MAX_RANGE, DepthFrame

CONDITIONS = ("normal", "overexposed", "underexposed", "high_speed")

OVEREXPOSED_DROPOUT = 0.6
UNDEREXPOSED_SIGMA = 0.3
UNDEREXPOSED_DROPOUT = 0.3
HIGH_SPEED_STALE = 0.4
MIN_DEPTH = 0.05


def _pick(rng, n, frac):
    return rng.choice(n, size=int(np.floor(frac * n)), replace=False)


def corrupt_depth(d: DepthFrame, condition, rng, prev: DepthFrame | None = None, max_range=MAX_RANGE):
    """Returns a new DepthFrame; ``rng`` is a Generator or an integer seed."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown lighting condition {condition!r}")
    if condition == "normal":
        return d
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    vals = d.values.astype(np.float32).copy()
    flat = vals.reshape(-1)
    n = flat.size
    if condition == "overexposed":
        flat[_pick(rng, n, OVEREXPOSED_DROPOUT)] = max_range
    elif condition == "underexposed":
        noisy = flat + rng.normal(0.0, UNDEREXPOSED_SIGMA, n).astype(np.float32)
        flat[:] = np.clip(noisy, MIN_DEPTH, max_range)
        flat[_pick(rng, n, UNDEREXPOSED_DROPOUT)] = max_range
    else:
        before = (prev.values if prev is not None else d.values).reshape(-1)
        blended = 0.5 * before + 0.5 * flat
        stale = _pick(rng, n, HIGH_SPEED_STALE)
        blended[stale] = before[stale]
        flat[:] = blended
    return DepthFrame(vals, d.timestamp)
