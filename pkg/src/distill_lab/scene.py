"""Linear multi-view scene: one parameter vector seen through several projections.

Objects live in a low-dimensional subspace and every view is an orthographic
camera orbiting it, so neighbouring views see similar layouts of the same
objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import rng as rng_mod
from .ode import ddim_invert
from .oracle import Condition, DiffusionOracle, GaussianMixture
from .schedule import NoiseSchedule, TimeGrid


@dataclass(frozen=True)
class View:
    """A projection ``P`` (d x D, orthonormal rows) with its conditioning tag."""

    id: int
    P: np.ndarray
    condition: Condition

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] > P.shape[1]:
            raise ValueError("P must be d x D with d <= D")
        if not np.allclose(P @ P.T, np.eye(P.shape[0]), atol=1e-10, rtol=0):
            raise ValueError("projection rows must be orthonormal")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def d(self) -> int:
        return self.P.shape[0]

    @property
    def D(self) -> int:
        return self.P.shape[1]

    def render(self, psi):
        psi = np.asarray(psi, dtype=np.float64)
        if psi.shape[-1] != self.D:
            raise ValueError(f"psi has dimension {psi.shape[-1]}, view expects {self.D}")
        return psi @ self.P.T

    def backproject(self, grad_x):
        """Adjoint of ``render``: ``P^T grad_x``."""
        g = np.asarray(grad_x, dtype=np.float64)
        if g.shape[-1] != self.d:
            raise ValueError(f"gradient has dimension {g.shape[-1]}, view renders {self.d}")
        return g @ self.P


def render(psi, view: View):
    return view.render(psi)


def backproject(grad_x, view: View):
    return view.backproject(grad_x)


@dataclass(frozen=True)
class ObjectLibrary:
    """Ground-truth objects and the mode scale of their per-view images."""

    objects: np.ndarray
    scale: float
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        obj = np.atleast_2d(np.array(self.objects, dtype=np.float64))
        K = obj.shape[0]
        w = np.full(K, 1.0 / K) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if w.shape != (K,) or np.any(w <= 0):
            raise ValueError("need one positive weight per object")
        object.__setattr__(self, "objects", obj)
        object.__setattr__(self, "weights", w / w.sum())
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def K(self) -> int:
        return self.objects.shape[0]

    @property
    def D(self) -> int:
        return self.objects.shape[1]

    def view_mixture(self, view: View) -> GaussianMixture:
        return GaussianMixture(self.weights, view.render(self.objects), np.full(self.K, self.scale))

    def min_view_separation(self, views) -> float:
        if self.K < 2:
            return float("inf")
        return min(float(np.linalg.norm(v.render(a) - v.render(b)))
                   for v in views for a, b in combinations(self.objects, 2))


@dataclass
class Scene:
    """Views plus the library that defines their conditional distributions."""

    library: ObjectLibrary
    views: list
    context: str = "scene"

    @property
    def D(self) -> int:
        return self.library.D

    @property
    def d(self) -> int:
        return self.views[0].d

    def registry(self) -> dict:
        """Condition -> mixture for every view."""
        return {v.condition: self.library.view_mixture(v) for v in self.views}

    def oracle(self, schedule: NoiseSchedule, background_scale: float | None = None,
               background_weight: float = 0.5) -> DiffusionOracle:
        """Oracle over the view conditions.

        Args:
            schedule: Noise schedule.
            background_scale: If set, registers ``label:background`` as a broad
                ``N(0, scale^2 I)`` class so guidance has something to push away from.
            background_weight: Prior mass of the background class; the views share the rest.
        """
        reg = self.registry()
        if background_scale is None:
            return DiffusionOracle(schedule, reg)
        if not 0 < background_weight < 1:
            raise ValueError("background_weight must lie in (0, 1)")
        priors = {c: (1.0 - background_weight) / len(reg) for c in reg}
        bg = Condition.label("background")
        reg[bg] = GaussianMixture([1.0], np.zeros((1, self.d)), [background_scale])
        priors[bg] = background_weight
        return DiffusionOracle(schedule, reg, priors)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def orbit_views(D: int, d: int, V: int, rng, arc: float = 1.0, mix: float = 1.0,
                context: str = "scene"):
    """Cameras orbiting an ``m = d + 1`` dimensional object subspace.

    View ``v`` rotates the object subspace by ``theta_v`` in its first/last
    coordinate plane, keeps the first ``d`` coordinates, and blends in a
    random projection of the complement so the views jointly see all of R^D:
    ``P_v = mix * C_v U^T + sqrt(1 - mix^2) * B_v W^T``.

    Args:
        D: Parameter dimension.
        d: Rendered dimension.
        V: Number of views.
        rng: numpy Generator.
        arc: Total orbit angle in radians, centred on zero.
        mix: Weight of the object subspace in every view, in (0, 1].
        context: Context id used in the view conditions.

    Returns:
        ``(views, U)`` where ``U`` (D x m) spans the object subspace.
    """
    m = d + 1
    if d < 1 or D < m:
        raise ValueError(f"need 1 <= d and D >= d + 1, got d={d}, D={D}")
    if V < 1:
        raise ValueError("need at least one view")
    if not 0 < mix <= 1:
        raise ValueError("mix must lie in (0, 1]")
    basis = _orthogonal(rng, D)
    U, W = basis[:, :m], basis[:, m:]
    nuisance = math.sqrt(max(1.0 - mix * mix, 0.0))
    views = []
    for v in range(V):
        th = arc * (v / (V - 1) - 0.5) if V > 1 else 0.0
        R = np.eye(m)
        R[0, 0] = R[m - 1, m - 1] = math.cos(th)
        R[0, m - 1], R[m - 1, 0] = -math.sin(th), math.sin(th)
        P = mix * R[:d, :] @ U.T
        if W.shape[1] >= d:
            B = _orthogonal(rng, W.shape[1])[:d, :]
            P = P + nuisance * B @ W.T
        elif nuisance > 0:
            raise ValueError("complement too small for the nuisance blend; use mix=1")
        views.append(View(v, P, Condition.view(context, v)))
    return views, U


def build_library(D: int, d: int, K: int, V: int, s: float, seed: int, radius: float = None,
                  arc: float = 1.0, mix: float = 1.0, weights=None, context: str = "scene",
                  max_tries: int = 1000) -> Scene:
    """Random objects seen by orbiting cameras, separated by ``10 s`` in every view.

    Args:
        D: Parameter dimension.
        d: Rendered dimension.
        K: Number of objects.
        V: Number of views.
        s: Mode scale of every per-view component.
        seed: Library seed; builds are bit-identical for equal seeds.
        radius: Std of the object coordinates; defaults to ``10 s``.
        arc: Orbit angle covered by the views.
        mix: Object-subspace weight of every view.
        weights: Optional object weights (equal by default).
        context: Context id of the view conditions.
        max_tries: Object resampling budget.

    Returns:
        The assembled ``Scene``.

    Raises:
        RuntimeError: if the separation cannot be met within ``max_tries``.
    """
    if K < 1 or s <= 0:
        raise ValueError("need K >= 1 and s > 0")
    gen = rng_mod.stream(seed, "library")
    views, U = orbit_views(D, d, V, gen, arc, mix, context)
    radius = 10.0 * s if radius is None else radius
    for _ in range(max_tries):
        lib = ObjectLibrary(radius * gen.standard_normal((K, U.shape[1])) @ U.T, s, weights)
        if lib.min_view_separation(views) >= 10.0 * s:
            return Scene(lib, views, context)
    raise RuntimeError(f"could not separate {K} objects by {10 * s} in every view after {max_tries} draws")


def seed_dispersion_study(oracle: DiffusionOracle, scene: Scene, grid: TimeGrid,
                          guidance: float = 1.0):
    """Within-object over across-object mean distance of inverted seeds.

    Every object is rendered in every view and inverted to time ``T`` under
    that view's condition.

    Returns:
        The ratio, or ``None`` when there is a single object (no across-object pairs).
    """
    lib = scene.library
    if lib.K < 2:
        return None
    T = oracle.schedule.T
    seeds = {}
    for k, obj in enumerate(lib.objects):
        for v in scene.views:
            path = ddim_invert(oracle, v.render(obj), v.condition, T, grid, guidance)
            z = path.final_state.x
            if not np.all(np.isfinite(z)):
                raise FloatingPointError(f"inversion of object {k} in view {v.id} failed")
            seeds[(k, v.id)] = z
    within, across = [], []
    for (a, za), (b, zb) in combinations(sorted(seeds.items()), 2):
        (within if a[0] == b[0] else across).append(np.linalg.norm(za - zb))
    within_mean = float(np.mean(within)) if within else 0.0
    return within_mean / float(np.mean(across))
