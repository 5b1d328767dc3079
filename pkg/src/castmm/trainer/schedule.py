"""Node masking and the warmup + periodic cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np


def sample_mask(n_nodes: int, ratio: float, rng: np.random.Generator) -> list[int]:
    """Mask each node with probability ``ratio``; never returns an empty set.

    When every Bernoulli draw comes up empty, node 0 is masked instead.
    """
    if n_nodes < 1:
        raise ValueError("sample_mask needs at least one node")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"mask ratio must be in (0, 1], got {ratio}")
    hit = rng.random(n_nodes) < ratio
    idx = np.flatnonzero(hit).tolist()
    return idx if idx else [0]


def lr_at(step: int, config) -> float:
    """Learning rate at ``step`` for any config with warmup_steps, peak_lr and period."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    w, peak, p = config.warmup_steps, config.peak_lr, config.period
    if step < w:
        return peak * step / w
    phase = ((step - w) % p) / p
    return peak * (1.0 + math.cos(2.0 * math.pi * phase)) / 2.0
