"""Empirical Lipschitz monitoring of the learned gradient networks."""

from dataclasses import dataclass

import numpy as np

MODULE_KINDS = ("target", "noise")


@dataclass
class LipschitzEstimate:
    module_kind: str
    stage_index: int
    estimate: float
    sample_count: int


def lipschitz_lower_bound(fn, shape, probe_count, rng):
    """Max of ``|fn(x1) - fn(x2)|_F / |x1 - x2|_F`` over random probe pairs.

    Probes are drawn uniformly from [0, 1], the normalised image range.
    Returns ``(estimate, pairs_used)``.
    """
    if probe_count < 2:
        raise ValueError("probe_count must be >= 2")
    best, used = 0.0, 0
    for _ in range(probe_count):
        x1 = rng.random(shape)
        x2 = rng.random(shape)
        dx = np.linalg.norm(x1 - x2)
        if dx == 0:
            continue
        dy = np.linalg.norm(fn(x1) - fn(x2))
        best = max(best, float(dy / dx))
        used += 1
    if used == 0:
        raise ValueError("all probe pairs coincide")
    return best, used


def estimate_lipschitz(model, kind, stage, probe_count=8, seed=0, size=(32, 32)):
    """Lower bound on the Lipschitz constant of the target (``"target"``) or
    noise (``"noise"``) gradient network of one stage."""
    if kind not in MODULE_KINDS:
        raise ValueError(f"kind must be one of {MODULE_KINDS}, got {kind!r}")
    branch = getattr(model.stages[stage], kind)
    dtype = model.dtype
    rng = np.random.default_rng(seed)

    def g(x):
        return branch.forward(x.astype(dtype))

    est, used = lipschitz_lower_bound(g, (1, 1) + tuple(size), probe_count, rng)
    return LipschitzEstimate(kind, stage, est, used)
