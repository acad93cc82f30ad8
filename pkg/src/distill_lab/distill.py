"""Score-distillation gradient rules and the image/scene optimization loops.

Each ``grad_*`` function returns a ``GradReport`` whose ``grad`` already
carries the weight ``w(t)``; the loops apply plain gradient descent
``x <- x - lr * grad``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import rng as rng_mod
from .ode import OdePath, PathCache, ddim_invert
from .oracle import DiffusionOracle, as_condition
from .schedule import NoiseSchedule, TimeGrid, anneal_time, snap_to_ddim_grid

VARIANTS = ("SDS", "ASD", "SDI", "Consistent3D", "SamplingDSD", "DSD")
DELTA_RULES = ("fraction", "ddim")
W_RULES = ("sigma_low", "one")
INTERP_RULES = ("matched", "literal")


class DivergenceError(RuntimeError):
    """Raised when an optimization leaves the finite, bounded region."""

    def __init__(self, step: int, t: float, norm: float):
        super().__init__(f"diverged at step {step} (t={t:.6g}, |x|={norm:.6g})")
        self.step = step
        self.t = t
        self.norm = norm


@dataclass(frozen=True)
class DistillConfig:
    """Settings of one distillation run.

    Attributes:
        variant: One of ``VARIANTS``.
        n_steps: Optimizer iterations N.
        n_ddim: DDIM grid size.
        t_min: Floor of the annealed time.
        delta_rule: ``"fraction"`` for delta = delta_frac * (t - t_min),
            ``"ddim"`` for delta = T / n_ddim.
        delta_frac: Constant of the fraction rule.
        w_rule: ``"sigma_low"`` weights by sigma at the lower time, ``"one"`` disables weighting.
        cfg_low: Guidance at the lower-noise evaluation (and the single evaluation of SDS/Consistent3D).
        cfg_high: Guidance at the higher-noise evaluation.
        cfg_path: Guidance while solving or inverting the ODE.
        lr: Step size; ``None`` means n_ddim / n_steps.
        interp: ``"matched"`` uses sqrt(1 - a(tau)) at each time; ``"literal"``
            reuses the higher-time noise coefficient at the lower time.
        diverge_limit: Abort once |x| exceeds this.
    """

    variant: str = "DSD"
    n_steps: int = 100
    n_ddim: int = 10
    t_min: float = 20.0
    delta_rule: str = "fraction"
    delta_frac: float = 0.1
    w_rule: str = "sigma_low"
    cfg_low: float = 7.5
    cfg_high: float = 1.0
    cfg_path: float = 7.5
    lr: float | None = None
    interp: str = "matched"
    diverge_limit: float = 1e6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_steps < 1 or self.n_ddim < 1:
            raise ValueError("n_steps and n_ddim must be >= 1")
        if self.t_min < 0:
            raise ValueError("t_min must be >= 0")
        if self.delta_rule not in DELTA_RULES:
            raise ValueError(f"delta_rule must be one of {DELTA_RULES}")
        if self.w_rule not in W_RULES:
            raise ValueError(f"w_rule must be one of {W_RULES}")
        if self.interp not in INTERP_RULES:
            raise ValueError(f"interp must be one of {INTERP_RULES}")
        if min(self.cfg_low, self.cfg_high, self.cfg_path) < 0:
            raise ValueError("guidance scales must be >= 0")
        if self.delta_frac < 0:
            raise ValueError("delta_frac must be >= 0")
        if self.lr is not None and not self.lr > 0:
            raise ValueError("lr must be positive")
        if not self.diverge_limit > 0:
            raise ValueError("diverge_limit must be positive")

    @property
    def step_size(self) -> float:
        return self.lr if self.lr is not None else self.n_ddim / self.n_steps

    def with_(self, **changes) -> "DistillConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class GradReport:
    """Gradient with the noise evaluations that produced it."""

    grad: np.ndarray
    eps_low: np.ndarray
    eps_high: np.ndarray
    t_low: float
    t_high: float
    aux: dict = field(default_factory=dict)


def weight(schedule: NoiseSchedule, t_low: float, rule: str) -> float:
    """Gradient weight w(t)."""
    if rule == "sigma_low":
        return float(schedule.sigma(t_low))
    if rule == "one":
        return 1.0
    raise ValueError(f"unknown w_rule {rule!r}")


def delta_for(t: float, cfg: DistillConfig, T: float) -> float:
    """Gap between the lower and the higher evaluation time."""
    if cfg.delta_rule == "fraction":
        return cfg.delta_frac * max(t - cfg.t_min, 0.0)
    return T / cfg.n_ddim


def _noised(schedule, x, t, eps):
    return schedule.signal(t) * x + schedule.noise(t) * eps


def _check_dim(oracle, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (oracle.dim,):
        raise ValueError(f"expected a vector of dimension {oracle.dim}, got shape {x.shape}")
    return x


def grad_sds(oracle: DiffusionOracle, x_pi, t: float, y, noise, cfg: DistillConfig) -> GradReport:
    """Score distillation with one fresh noise draw: ``w (eps_hat - noise)``."""
    sch = oracle.schedule
    x_pi = _check_dim(oracle, x_pi)
    noise = _check_dim(oracle, noise)
    e_hat = oracle.eps_predict(_noised(sch, x_pi, t, noise), t, y, cfg.cfg_low)
    w = weight(sch, t, cfg.w_rule)
    return GradReport(w * (e_hat - noise), e_hat, noise, t, t, {"w": w})


def grad_asd(oracle: DiffusionOracle, x_pi, t: float, y, noise, cfg: DistillConfig) -> GradReport:
    """Two adjacent times sharing one fresh noise draw."""
    sch = oracle.schedule
    x_pi = _check_dim(oracle, x_pi)
    noise = _check_dim(oracle, noise)
    t_hi = min(t + delta_for(t, cfg, sch.T), sch.T)
    e_lo = oracle.eps_predict(_noised(sch, x_pi, t, noise), t, y, cfg.cfg_low)
    e_hi = oracle.eps_predict(_noised(sch, x_pi, t_hi, noise), t_hi, y, cfg.cfg_high)
    w = weight(sch, t, cfg.w_rule)
    return GradReport(w * (e_lo - e_hi), e_lo, e_hi, t, t_hi, {"w": w})


def grad_sdi(oracle: DiffusionOracle, x_pi, t: float, y, cfg: DistillConfig,
             grid: TimeGrid | None = None) -> GradReport:
    """Inversion-based rule: invert ``x_pi`` up to the snapped higher time and reuse its noise."""
    sch = oracle.schedule
    x_pi = _check_dim(oracle, x_pi)
    grid = grid or TimeGrid.ddim(cfg.n_ddim, sch.T)
    t_hi = snap_to_ddim_grid(min(t + delta_for(t, cfg, sch.T), sch.T), grid)
    inv = ddim_invert(oracle, x_pi, y, t_hi, grid, cfg.cfg_path)
    x_t = inv.final_state.x
    if not np.all(np.isfinite(x_t)):
        raise FloatingPointError("inversion produced a non-finite state")
    e_hi = oracle.eps_predict(x_t, t_hi, y, cfg.cfg_high)
    x_lo = sch.signal(t) * x_pi + _low_coeff(sch, t, t_hi, cfg) * e_hi
    e_lo = oracle.eps_predict(x_lo, t, y, cfg.cfg_low)
    w = weight(sch, t, cfg.w_rule)
    return GradReport(w * (e_lo - e_hi), e_lo, e_hi, t, t_hi, {"w": w, "x_inverted": x_t})


def grad_consistent3d(oracle: DiffusionOracle, x_pi, t: float, y, eps_star,
                      cfg: DistillConfig) -> GradReport:
    """Fixed-noise residual ``w (eps_hat(sqrt(a) x + sqrt(1-a) eps*) - eps*)``."""
    sch = oracle.schedule
    x_pi = _check_dim(oracle, x_pi)
    eps_star = _check_dim(oracle, eps_star)
    e_hat = oracle.eps_predict(_noised(sch, x_pi, t, eps_star), t, y, cfg.cfg_low)
    w = weight(sch, t, cfg.w_rule)
    return GradReport(w * (e_hat - eps_star), e_hat, eps_star, t, t, {"w": w})


def sampling_times(t: float, grid: TimeGrid) -> tuple:
    """Consecutive solver times (lower, higher) bracketing ``t``.

    The lower time is the largest point of ``grid + {0}`` at or below ``t``;
    the higher one is the next grid point above it.
    """
    tol = 1e-9 * max(1.0, grid.T)
    pts = list(grid.points) + [0.0]
    for i, p in enumerate(pts):
        if p <= t + tol:
            if i == 0:
                raise ValueError(f"time {t} is at the top of the grid; no higher solver time")
            return p, pts[i - 1]
    raise ValueError(f"time {t} is negative")


def grad_sampling_dsd(oracle: DiffusionOracle, t: float, y, path: OdePath,
                      cfg: DistillConfig) -> GradReport:
    """Gradient from two consecutive states of the cached ODE; independent of the image."""
    sch = oracle.schedule
    if as_condition(y) != path.condition:
        raise ValueError("path was solved under a different condition")
    t_lo, t_hi = sampling_times(t, path.grid)
    path.extend_to(t_lo)
    e_lo = path.eps_at(t_lo)
    e_hi = path.eps_at(t_hi)
    w = float(sch.sigma(t_lo))
    return GradReport(w * (e_lo - e_hi), e_lo, e_hi, t_lo, t_hi, {"w": w})


def _low_coeff(sch, t_lo, t_hi, cfg):
    return sch.noise(t_lo) if cfg.interp == "matched" else sch.noise(t_hi)


def grad_dsd(oracle: DiffusionOracle, x_pi, t: float, y, path: OdePath,
             cfg: DistillConfig) -> GradReport:
    """Interpolated rule: the image is re-noised with the ODE's noise at the snapped higher time."""
    sch = oracle.schedule
    x_pi = _check_dim(oracle, x_pi)
    if as_condition(y) != path.condition:
        raise ValueError("path was solved under a different condition")
    t_hi = snap_to_ddim_grid(min(t + delta_for(t, cfg, sch.T), sch.T), path.grid)
    path.extend_to(t_hi)
    eps = path.eps_at(t_hi)
    x_hi = sch.signal(t_hi) * x_pi + sch.noise(t_hi) * eps
    x_lo = sch.signal(t) * x_pi + _low_coeff(sch, t, t_hi, cfg) * eps
    e_lo = oracle.eps_predict(x_lo, t, y, cfg.cfg_low)
    e_hi = oracle.eps_predict(x_hi, t_hi, y, cfg.cfg_high)
    w = weight(sch, t, cfg.w_rule)
    return GradReport(w * (e_lo - e_hi), e_lo, e_hi, t, t_hi, {"w": w, "eps_path": eps})


class RunContext:
    """Per-run state shared by the image and scene loops."""

    def __init__(self, oracle, cfg, seed_index, base_seed, cache, dim):
        self.oracle = oracle
        self.cfg = cfg
        self.sch = oracle.schedule
        self.grid = TimeGrid.ddim(cfg.n_ddim, self.sch.T)
        self.cache = cache if cache is not None else PathCache(oracle)
        self.eps_star = rng_mod.prior_seed(base_seed, seed_index, dim)
        self.noise_rng = rng_mod.stream(base_seed, seed_index, "noise", cfg.variant)
        self.t_lo_sds = max(cfg.t_min, 1.0)

    def path(self, y) -> OdePath:
        return self.cache.path(self.eps_star, y, self.grid, self.cfg.cfg_path)

    def time(self, i: int) -> float:
        if self.cfg.variant == "SDS":
            return float(self.noise_rng.uniform(self.t_lo_sds, self.sch.T))
        return anneal_time(i, self.cfg.n_steps, self.sch.T, self.cfg.t_min)

    def grad(self, x, t, y) -> GradReport:
        v = self.cfg.variant
        o, c = self.oracle, self.cfg
        if v == "SDS":
            return grad_sds(o, x, t, y, self.noise_rng.standard_normal(o.dim), c)
        if v == "ASD":
            return grad_asd(o, x, t, y, self.noise_rng.standard_normal(o.dim), c)
        if v == "SDI":
            return grad_sdi(o, x, t, y, c, self.grid)
        if v == "Consistent3D":
            return grad_consistent3d(o, x, t, y, self.eps_star, c)
        if v == "SamplingDSD":
            return grad_sampling_dsd(o, t, y, self.path(y), c)
        return grad_dsd(o, x, t, y, self.path(y), c)


def _guard(x, step, t, limit):
    norm = float(np.linalg.norm(x))
    if not math.isfinite(norm) or norm > limit:
        raise DivergenceError(step, t, norm)


def optimize_image(oracle: DiffusionOracle, x_init, y, cfg: DistillConfig, seed_index: int,
                   base_seed: int = 0, cache: PathCache | None = None):
    """Optimize a single image directly against the oracle.

    SamplingDSD starts from the ODE's first one-step prediction, which is
    what makes it reproduce the DDIM sample; every other variant starts at
    ``x_init``.

    Args:
        oracle: Noise predictor.
        x_init: Initial image.
        y: Condition.
        cfg: Run settings.
        seed_index: Selects the fixed prior draw and all run randomness.
        base_seed: Experiment-level seed.
        cache: Optional shared path cache.

    Returns:
        ``(final, trace)`` where trace rows are ``(step, t, grad_norm, x...)``.

    Raises:
        DivergenceError: if the iterate blows up.
    """
    y = as_condition(y)
    st = RunContext(oracle, cfg, seed_index, base_seed, cache, oracle.dim)
    if cfg.variant == "SamplingDSD":
        x = st.path(y).x0_at(st.sch.T).copy()
    else:
        x = _check_dim(oracle, x_init).copy()
    lr = cfg.step_size
    trace = np.empty((cfg.n_steps, 3 + oracle.dim))
    for i in range(1, cfg.n_steps + 1):
        t = st.time(i)
        rep = st.grad(x, t, y)
        x = x - lr * rep.grad
        _guard(x, i, t, cfg.diverge_limit)
        trace[i - 1, :3] = (i, t, np.linalg.norm(rep.grad))
        trace[i - 1, 3:] = x
    return x, trace


def ddim_reference(oracle: DiffusionOracle, y, cfg: DistillConfig, seed_index: int,
                   base_seed: int = 0, cache: PathCache | None = None) -> np.ndarray:
    """The DDIM sample a run with this seed index is meant to follow."""
    st = RunContext(oracle, cfg, seed_index, base_seed, cache, oracle.dim)
    return st.path(as_condition(y)).extend_to(0.0).sample()


def optimize_scene(oracle: DiffusionOracle, scene, cfg: DistillConfig, seed_index: int,
                   base_seed: int = 0, cache: PathCache | None = None, psi_init=None):
    """Optimize shared scene parameters through randomly drawn views.

    One prior draw is shared by every view of the run. The view sequence
    depends only on ``(base_seed, seed_index)`` so variants see the same views.

    Args:
        oracle: Oracle with one registered condition per view.
        scene: A ``Scene`` (views plus parameter dimension).
        cfg: Run settings.
        seed_index: Run seed index.
        base_seed: Experiment-level seed.
        cache: Optional shared path cache.
        psi_init: Starting parameters; zeros by default.

    Returns:
        ``(psi, trace)`` with trace rows ``(step, t, grad_norm, view, psi...)``.
    """
    st = RunContext(oracle, cfg, seed_index, base_seed, cache, oracle.dim)
    view_rng = rng_mod.stream(base_seed, seed_index, "views")
    psi = np.zeros(scene.D) if psi_init is None else np.array(psi_init, dtype=np.float64)
    if psi.shape != (scene.D,):
        raise ValueError(f"psi must have dimension {scene.D}")
    lr = cfg.step_size
    trace = np.empty((cfg.n_steps, 4 + scene.D))
    n_views = len(scene.views)
    for i in range(1, cfg.n_steps + 1):
        t = st.time(i)
        v = int(view_rng.integers(n_views))
        view = scene.views[v]
        rep = st.grad(view.render(psi), t, view.condition)
        psi = psi - lr * view.backproject(rep.grad)
        _guard(psi, i, t, cfg.diverge_limit)
        trace[i - 1, :4] = (i, t, np.linalg.norm(rep.grad), v)
        trace[i - 1, 4:] = psi
    return psi, trace
