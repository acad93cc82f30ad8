"""Desk-scale score distillation laboratory."""

from .distill import (VARIANTS, DistillConfig, DivergenceError, RunContext, ddim_reference,
                      optimize_image, optimize_scene)
from .kernels import BACKEND
from .metrics import fidelity_nll, mode_coverage, pairwise_diversity, wasserstein2
from .ode import OdePath, OdeState, PathCache, ddim_forward, ddim_invert, ddim_step, x0_update
from .oracle import Condition, DiffusionOracle, GaussianMixture, cfg_combine
from .schedule import NoiseSchedule, TimeGrid, anneal_time, snap_to_ddim_grid

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Condition",
    "DiffusionOracle",
    "DistillConfig",
    "DivergenceError",
    "GaussianMixture",
    "NoiseSchedule",
    "OdePath",
    "OdeState",
    "PathCache",
    "RunContext",
    "TimeGrid",
    "VARIANTS",
    "anneal_time",
    "cfg_combine",
    "ddim_forward",
    "ddim_invert",
    "ddim_reference",
    "ddim_step",
    "fidelity_nll",
    "mode_coverage",
    "optimize_image",
    "optimize_scene",
    "pairwise_diversity",
    "snap_to_ddim_grid",
    "wasserstein2",
    "x0_update",
]
