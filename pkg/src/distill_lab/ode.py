"""DDIM stepping, forward solves, inversion and a cache of solved paths.

All stepping happens in the rescaled variable ``x_bar = x / sqrt(alpha_bar)``,
where one DDIM step is an exact Euler step in ``sigma``.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .oracle import DiffusionOracle, as_condition
from .schedule import NoiseSchedule, TimeGrid

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class OdeState:
    """Noisy state ``x`` at time ``t``."""

    t: float
    x: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        if not np.isfinite(x).all():
            raise ValueError(f"non-finite ODE state at t={self.t}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))

    def x_bar(self, schedule: NoiseSchedule) -> np.ndarray:
        return self.x / schedule.signal(self.t)


def ddim_step(schedule: NoiseSchedule, state: OdeState, t_next: float, eps) -> OdeState:
    """One DDIM step (forward or inverse) in the rescaled variable.

    Args:
        schedule: Noise schedule.
        state: Current state.
        t_next: Target time; below ``state.t`` denoises, above inverts.
        eps: Noise prediction used for the step.

    Returns:
        The state at ``t_next``.
    """
    schedule.alpha_bar(t_next)  # domain check
    if t_next == state.t:
        return state
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != state.x.shape or not np.isfinite(eps).all():
        raise ValueError("eps must be finite and match the state shape")
    x_bar = state.x_bar(schedule) + (schedule.sigma(t_next) - schedule.sigma(state.t)) * eps
    return OdeState(t_next, schedule.signal(t_next) * x_bar)


def x0_update(schedule: NoiseSchedule, x0_prev, eps_next, eps_prev, t_next: float):
    """Advance the one-step data prediction directly: ``x0 - sigma(t_next) (eps_next - eps_prev)``."""
    x0_prev = np.asarray(x0_prev, dtype=np.float64)
    eps_next = np.asarray(eps_next, dtype=np.float64)
    eps_prev = np.asarray(eps_prev, dtype=np.float64)
    if not (x0_prev.shape == eps_next.shape == eps_prev.shape):
        raise ValueError("x0_update operands must share a shape")
    return x0_prev - schedule.sigma(t_next) * (eps_next - eps_prev)


def _seed_digest(seed: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(seed, dtype=np.float64).tobytes()).hexdigest()


class OdePath:
    """A DDIM trajectory evaluated on a grid, extendable one step at a time.

    States and noise predictions are stored in visiting order. Forward paths
    start at the top of the grid from the seed and descend, optionally ending
    at time 0. Inverted paths start at time 0 from a clean point and ascend.

    Attributes:
        seed: Starting vector (the prior draw for forward paths).
        condition: Condition used for every noise prediction.
        guidance: CFG scale used while solving.
        grid: The DDIM grid.
        direction: ``"forward"`` or ``"inverse"``.
    """

    def __init__(self, oracle: DiffusionOracle, seed, condition, grid: TimeGrid,
                 guidance: float = 1.0, direction: str = "forward"):
        seed = np.array(seed, dtype=np.float64).reshape(-1)
        if seed.shape != (oracle.dim,):
            raise ValueError(f"seed has dimension {seed.size}, oracle expects {oracle.dim}")
        if direction not in ("forward", "inverse"):
            raise ValueError(f"unknown direction {direction!r}")
        if abs(grid.T - oracle.schedule.T) > _TIME_TOL * oracle.schedule.T and direction == "forward":
            raise ValueError("forward paths need a grid that starts at T")
        self.oracle = oracle
        self.schedule = oracle.schedule
        self.seed = seed
        self.seed.setflags(write=False)
        self.condition = as_condition(condition)
        self.grid = grid
        self.guidance = float(guidance)
        self.direction = direction
        if direction == "forward":
            self._plan = list(grid.points) + [0.0]
        else:
            self._plan = [0.0] + list(reversed(grid.points))
        self.times: list = []
        self._x: list = []
        self._eps: list = []
        self._push(self._plan[0], seed)

    def _push(self, t, x):
        eps = self.oracle.eps_predict(x, t, self.condition, self.guidance)
        self.times.append(float(t))
        self._x.append(np.asarray(x, dtype=np.float64))
        self._eps.append(np.asarray(eps, dtype=np.float64))

    @property
    def key(self) -> tuple:
        return (_seed_digest(self.seed), str(self.condition), self.grid.key(), self.guidance, self.direction)

    def _plan_index(self, t: float) -> int:
        for i, p in enumerate(self._plan):
            if abs(p - t) <= _TIME_TOL * max(1.0, self.schedule.T):
                return i
        raise KeyError(f"time {t} is not reachable on this path's grid")

    def extend_to(self, t: float) -> "OdePath":
        """Solve until ``t`` is visited; a no-op if it already is."""
        target = self._plan_index(t)
        while len(self.times) <= target:
            i = len(self.times)
            state = OdeState(self.times[-1], self._x[-1])
            nxt = ddim_step(self.schedule, state, self._plan[i], self._eps[-1])
            self._push(nxt.t, nxt.x)
        return self

    def _index(self, t: float) -> int:
        i = self._plan_index(t)
        if i >= len(self.times):
            raise KeyError(f"time {t} has not been solved yet")
        return i

    def state(self, t: float) -> OdeState:
        return OdeState(self.times[self._index(t)], self._x[self._index(t)])

    def x_at(self, t: float) -> np.ndarray:
        return self._x[self._index(t)]

    def eps_at(self, t: float) -> np.ndarray:
        return self._eps[self._index(t)]

    def x0_at(self, t: float) -> np.ndarray:
        """One-step data prediction at a visited time."""
        i = self._index(t)
        return self._x[i] / self.schedule.signal(self.times[i]) - self.schedule.sigma(self.times[i]) * self._eps[i]

    @property
    def final_state(self) -> OdeState:
        return OdeState(self.times[-1], self._x[-1])

    def sample(self) -> np.ndarray:
        """Data prediction at the last visited time (the DDIM sample once time 0 is reached)."""
        return self.x0_at(self.times[-1])

    def states(self) -> list:
        return [OdeState(t, x) for t, x in zip(self.times, self._x)]

    def __len__(self):
        return len(self.times)


def ddim_forward(oracle: DiffusionOracle, seed, y, t_stop: float, grid: TimeGrid,
                 guidance: float = 1.0) -> OdePath:
    """Solve from ``x(T) = seed`` down to ``t_stop`` (a grid time or 0)."""
    return OdePath(oracle, seed, y, grid, guidance, "forward").extend_to(t_stop)


def ddim_invert(oracle: DiffusionOracle, x0, y, t_stop: float, grid: TimeGrid,
                guidance: float = 1.0) -> OdePath:
    """Invert a clean point up to ``t_stop``; each step reuses the lower-noise prediction.

    Returns:
        An ascending path whose ``final_state`` is the recovered noisy state.
    """
    return OdePath(oracle, x0, y, grid, guidance, "inverse").extend_to(t_stop)


def reference_integrate(oracle: DiffusionOracle, seeds, y, steps: int, guidance: float = 1.0,
                        t_stop: float = 0.0):
    """Euler integration of the probability-flow ODE in ``sigma`` on a uniform time grid.

    Args:
        oracle: Noise predictor.
        seeds: One seed of shape (d,) or a batch (n, d).
        y: Condition.
        steps: Number of uniform time steps over ``[t_stop, T]``.
        guidance: CFG scale.
        t_stop: Final time.

    Returns:
        The state at ``t_stop`` with the shape of ``seeds``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    sch = oracle.schedule
    x = np.array(seeds, dtype=np.float64)
    times = sch.T - (sch.T - t_stop) * np.arange(steps + 1) / steps
    sig = sch.sigma(times)
    sig_a = sch.signal(times)
    x_bar = x / sig_a[0]
    for j in range(steps):
        eps = oracle.eps_predict(sig_a[j] * x_bar, times[j], y, guidance)
        x_bar = x_bar + (sig[j + 1] - sig[j]) * eps
    return sig_a[-1] * x_bar


class PathCache:
    """Thread-safe LRU cache of forward paths keyed by (seed, condition, grid, guidance).

    Args:
        oracle: Shared oracle.
        capacity: Maximum number of cached paths.
    """

    def __init__(self, oracle: DiffusionOracle, capacity: int = 64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.oracle = oracle
        self.capacity = capacity
        self._paths: OrderedDict = OrderedDict()
        self._lock = threading.RLock()
        self.hits = 0
        self.misses = 0

    def path(self, seed, y, grid: TimeGrid, guidance: float = 1.0) -> OdePath:
        seed = np.asarray(seed, dtype=np.float64)
        key = (_seed_digest(seed), str(as_condition(y)), grid.key(), float(guidance))
        with self._lock:
            path = self._paths.get(key)
            if path is None:
                self.misses += 1
                path = OdePath(self.oracle, seed, y, grid, guidance)
                self._paths[key] = path
                while len(self._paths) > self.capacity:
                    self._paths.popitem(last=False)
            else:
                self.hits += 1
                self._paths.move_to_end(key)
            return path

    def get(self, seed, y, grid: TimeGrid, guidance: float, t: float):
        """State and noise prediction at ``t``, solving only the missing suffix."""
        with self._lock:
            path = self.path(seed, y, grid, guidance).extend_to(t)
            return path.state(t), path.eps_at(t)

    def __len__(self):
        with self._lock:
            return len(self._paths)

    def clear(self):
        with self._lock:
            self._paths.clear()
