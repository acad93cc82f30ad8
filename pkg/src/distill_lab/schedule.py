"""Variance-preserving noise schedule and the time grids built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# relative tolerance used when comparing times against grid points
_GRID_RTOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine-shaped VP schedule on continuous time ``[0, T]``.

    ``alpha_bar`` is the cosine curve rescaled into
    ``[clamp_eps, 1 - clamp_eps]``, so it stays strictly decreasing and
    ``sigma`` stays finite at both ends.
    """

    T: float = 1000.0
    clamp_eps: float = 1e-4

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")

    def _check(self, t):
        arr = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > self.T):
            raise ValueError(f"time {t!r} outside [0, {self.T}]")
        return arr

    def _alpha_scalar(self, t: float) -> float:
        if not 0.0 <= t <= self.T:  # also rejects nan
            raise ValueError(f"time {t!r} outside [0, {self.T}]")
        c = math.cos(t / self.T * (math.pi / 2))
        return self.clamp_eps + (1.0 - 2.0 * self.clamp_eps) * c * c

    def alpha_bar(self, t):
        if isinstance(t, (float, int, np.floating, np.integer)):
            return self._alpha_scalar(float(t))
        arr = self._check(t)
        c = np.cos(arr / self.T * (np.pi / 2))
        out = self.clamp_eps + (1.0 - 2.0 * self.clamp_eps) * c * c
        return float(out) if out.ndim == 0 else out

    def signal(self, t):
        """s(t) = sqrt(alpha_bar(t))."""
        a = self.alpha_bar(t)
        return math.sqrt(a) if isinstance(a, float) else np.sqrt(a)

    def noise(self, t):
        """sqrt(1 - alpha_bar(t)), the std of the injected noise."""
        a = self.alpha_bar(t)
        return math.sqrt(1.0 - a) if isinstance(a, float) else np.sqrt(1.0 - a)

    def sigma(self, t):
        """Noise-to-signal ratio sqrt(1 - a) / sqrt(a)."""
        a = self.alpha_bar(t)
        if isinstance(a, float):
            return math.sqrt(1.0 - a) / math.sqrt(a)
        return np.sqrt(1.0 - a) / np.sqrt(a)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly descending times in ``(0, T]``.

    ``kind`` is ``"ddim"`` for sampler grids and ``"optimizer"`` for the
    annealed optimization schedule; ``size`` is the step count that built it.
    """

    points: tuple
    kind: str
    size: int

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("empty time grid")
        if any(p <= 0 for p in pts):
            raise ValueError("grid times must be positive")
        if any(b >= a for a, b in zip(pts, pts[1:])):
            raise ValueError("grid times must be strictly descending")

    @classmethod
    def ddim(cls, n_ddim: int, T: float = 1000.0) -> "TimeGrid":
        """The sampler grid ``{T (1 - j/n_ddim) : j = 0..n_ddim-1}``."""
        if n_ddim < 1:
            raise ValueError(f"n_ddim must be >= 1, got {n_ddim}")
        return cls(tuple(T * (n_ddim - j) / n_ddim for j in range(n_ddim)), "ddim", n_ddim)

    @classmethod
    def optimizer(cls, n_steps: int, T: float = 1000.0, t_min: float = 0.0) -> "TimeGrid":
        """Times visited by the annealed optimizer, with duplicates from the
        ``t_min`` floor removed."""
        times = []
        for i in range(1, n_steps + 1):
            t = anneal_time(i, n_steps, T, t_min)
            if t > 0 and (not times or t < times[-1]):
                times.append(t)
        return cls(tuple(times), "optimizer", n_steps)

    @property
    def T(self) -> float:
        return self.points[0]

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def index_of(self, t: float) -> int:
        """Index of the grid point equal to ``t`` (within rounding), else KeyError."""
        tol = _GRID_RTOL * max(1.0, self.points[0])
        for i, p in enumerate(self.points):
            if abs(p - t) <= tol:
                return i
        raise KeyError(f"time {t} is not on the {self.kind} grid")

    def contains(self, t: float) -> bool:
        try:
            self.index_of(t)
        except KeyError:
            return False
        return True

    def key(self) -> tuple:
        return (self.kind, self.size, self.points)


def anneal_time(i: int, n_steps: int, T: float = 1000.0, t_min: float = 0.0) -> float:
    """Linear annealing ``t = T (1 - i/N)`` floored at ``t_min``."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not 1 <= i <= n_steps:
        raise ValueError(f"step index {i} outside [1, {n_steps}]")
    return max(T * (n_steps - i) / n_steps, t_min, 0.0)


def snap_to_ddim_grid(t_plus: float, grid: TimeGrid) -> float:
    """Smallest grid time ``>= t_plus``; times above the top snap to the top."""
    if not math.isfinite(t_plus):
        raise ValueError(f"non-finite time {t_plus}")
    tol = _GRID_RTOL * max(1.0, grid.points[0])
    best = grid.points[0]
    for p in grid.points:
        if p >= t_plus - tol:
            best = p
        else:
            break
    return best
