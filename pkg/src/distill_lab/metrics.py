"""Sample-set statistics: spread, mode coverage, fidelity and W2 distance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

MAX_W2_SIZE = 256


@dataclass
class SampleSet:
    """Final outputs of several runs with optional per-sample metadata."""

    samples: np.ndarray
    meta: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = as_samples(self.samples)
        if self.meta and len(self.meta) != len(self.samples):
            raise ValueError("meta must have one entry per sample")

    def __len__(self):
        return len(self.samples)


def as_samples(x) -> np.ndarray:
    """Coerce a SampleSet, list of vectors or array to a float (n, d) array."""
    if isinstance(x, SampleSet):
        return x.samples
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"samples must be a list of vectors, got shape {arr.shape}")
    return arr


def pairwise_diversity(samples) -> float:
    """Mean Euclidean distance over all unordered pairs."""
    x = as_samples(samples)
    if len(x) < 2:
        raise ValueError("pairwise diversity needs at least two samples")
    return float(np.mean(pdist(x)))


def mode_coverage(samples, modes, tau: float) -> int:
    """Number of modes with at least one sample within ``tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    x = as_samples(samples)
    m = as_samples(modes)
    if len(x) == 0 or len(m) == 0:
        return 0
    return int(np.sum(cdist(m, x).min(axis=1) <= tau))


def fidelity_nll(samples, oracle, y) -> float:
    """Mean negative log density of the samples under the clean conditional distribution."""
    x = as_samples(samples)
    if len(x) == 0:
        raise ValueError("no samples")
    return float(-np.mean(oracle.log_density0(x, y)))


def wasserstein2(a, b) -> float:
    """Exact W2 between two equal-size empirical sets via optimal assignment.

    Args:
        a: First sample set (n, d).
        b: Second sample set (n, d), n <= 256.

    Returns:
        ``sqrt(min_perm mean ||a_i - b_perm(i)||^2)``.
    """
    x, y = as_samples(a), as_samples(b)
    if len(x) != len(y):
        raise ValueError(f"sets must have equal size, got {len(x)} and {len(y)}")
    if len(x) > MAX_W2_SIZE:
        raise ValueError(f"exact assignment limited to {MAX_W2_SIZE} samples")
    if x.shape[1] != y.shape[1]:
        raise ValueError("sets must share a dimension")
    if len(x) == 0:
        return 0.0
    cost = cdist(x, y, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))
