"""Ready-made oracles and settings used by the tests and the benchmark configs."""

from __future__ import annotations

import numpy as np

from .distill import DistillConfig
from .oracle import Condition, DiffusionOracle, GaussianMixture
from .scene import Scene, build_library
from .schedule import NoiseSchedule

LABEL = Condition.label(0)
BACKGROUND = Condition.label("background")


def symmetric_pair(mu: float = 2.0, s: float = 0.1, schedule: NoiseSchedule | None = None) -> DiffusionOracle:
    """1D equal-weight modes at ``-mu`` and ``+mu`` under ``label:0``."""
    mix = GaussianMixture([0.5, 0.5], [[-mu], [mu]], [s, s])
    return DiffusionOracle(schedule or NoiseSchedule(), {LABEL: mix})


def two_mode_benchmark(mu: float = 1.5, s: float = 0.5, background_scale: float = 3.0,
                       background_weight: float = 0.5,
                       schedule: NoiseSchedule | None = None) -> DiffusionOracle:
    """The standard two-mode benchmark.

    ``label:0`` holds modes at +-mu; a broad ``label:background`` class makes
    the unconditional model differ from the conditional one, so guidance has
    an effect.
    """
    mixtures = {
        LABEL: GaussianMixture([0.5, 0.5], [[-mu], [mu]], [s, s]),
        BACKGROUND: GaussianMixture([1.0], [[0.0]], [background_scale]),
    }
    priors = {LABEL: 1.0 - background_weight, BACKGROUND: background_weight}
    return DiffusionOracle(schedule or NoiseSchedule(), mixtures, priors)


def three_mode_2d(schedule: NoiseSchedule | None = None) -> DiffusionOracle:
    """Unequal 2D triangle of modes with distinct scales."""
    mix = GaussianMixture([0.5, 0.3, 0.2], [[2.0, 0.0], [-1.0, 1.7], [-1.0, -1.7]], [0.2, 0.3, 0.15])
    return DiffusionOracle(schedule or NoiseSchedule(), {LABEL: mix})


def standard_gaussian(d: int = 1, schedule: NoiseSchedule | None = None) -> DiffusionOracle:
    """``N(0, I_d)`` under ``label:0``; its PF-ODE maps every seed to itself."""
    mix = GaussianMixture([1.0], np.zeros((1, d)), [1.0])
    return DiffusionOracle(schedule or NoiseSchedule(), {LABEL: mix})


def registered_mixtures() -> dict:
    """Named oracles covering 1D, 2D, single and multi-mode, guided and unguided cases."""
    return {
        "two_mode_1d": symmetric_pair(),
        "benchmark_1d": two_mode_benchmark(),
        "three_mode_2d": three_mode_2d(),
        "gaussian_3d": standard_gaussian(3),
    }


# Distillation settings of the two-mode benchmark.
BENCHMARK_DISTILL = DistillConfig(cfg_low=7.5, cfg_high=7.5, cfg_path=7.5)


def standard_scene(seed: int = 0) -> Scene:
    """Three objects in R^8 seen by six 2D orbiting views, mode scale 0.1."""
    return build_library(D=8, d=2, K=3, V=6, s=0.1, seed=seed)


# Scene runs need more iterations: each step only sees one view.
SCENE_DISTILL = DistillConfig(n_steps=400, cfg_low=7.5, cfg_high=7.5, cfg_path=7.5)
