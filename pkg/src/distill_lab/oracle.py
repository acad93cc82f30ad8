"""Exact noise predictors for Gaussian-mixture data distributions.

A ``DiffusionOracle`` plays the part of a pretrained conditional diffusion
model: every registered condition owns an isotropic Gaussian mixture, and the
noise prediction at time ``t`` is computed in closed form from the noised
marginal of that mixture.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import kernels
from .schedule import NoiseSchedule

_WEIGHT_TOL = 1e-12


class UnknownConditionError(KeyError):
    """Raised when a condition has no registered mixture."""


@dataclass(frozen=True, order=True)
class Condition:
    """Conditioning tag: unconditional, a class label, or a (context, view) pair."""

    kind: str
    key: tuple = ()

    def __post_init__(self):
        if self.kind not in ("unconditional", "label", "view"):
            raise ValueError(f"unknown condition kind {self.kind!r}")
        key = tuple(str(k) for k in self.key)
        object.__setattr__(self, "key", key)
        expected = {"unconditional": 0, "label": 1, "view": 2}[self.kind]
        if len(key) != expected:
            raise ValueError(f"{self.kind} condition takes {expected} key parts, got {key}")

    @classmethod
    def unconditional(cls) -> "Condition":
        return cls("unconditional")

    @classmethod
    def label(cls, ident) -> "Condition":
        return cls("label", (ident,))

    @classmethod
    def view(cls, context, view_id) -> "Condition":
        return cls("view", (context, view_id))

    @classmethod
    def parse(cls, text: str) -> "Condition":
        """Inverse of ``str``: ``unconditional``, ``label:<id>`` or ``view:<ctx>:<id>``."""
        parts = text.strip().split(":")
        if parts == ["unconditional"]:
            return cls.unconditional()
        if parts[0] in ("label", "view") and all(parts[1:]):
            return cls(parts[0], tuple(parts[1:]))
        raise ValueError(f"cannot parse condition {text!r}")

    def __str__(self):
        return ":".join((self.kind,) + self.key)


def as_condition(y) -> Condition:
    return y if isinstance(y, Condition) else Condition.parse(str(y))


class GaussianMixture:
    """Isotropic mixture ``sum_k w_k N(mu_k, s_k^2 I)``.

    Args:
        weights: Component weights, positive and summing to one.
        means: Array of shape (K, d).
        scales: Per-component standard deviations, all positive.
    """

    def __init__(self, weights, means, scales):
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(means, dtype=np.float64))
        s = np.asarray(scales, dtype=np.float64).reshape(-1)
        if mu.ndim != 2 or mu.shape[1] < 1:
            raise ValueError("means must have shape (K, d) with d >= 1")
        if not (len(w) == len(s) == mu.shape[0] >= 1):
            raise ValueError("weights, means and scales must agree on the component count")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights must be positive and sum to 1, got sum {w.sum()!r}")
        if np.any(~(s > 0)) or not np.all(np.isfinite(s)):
            raise ValueError("scales must be finite and positive")
        if not np.all(np.isfinite(mu)):
            raise ValueError("means must be finite")
        self.weights = w
        self.means = np.ascontiguousarray(mu)
        self.scales = np.ascontiguousarray(s)
        self._log_w = np.ascontiguousarray(np.log(w))
        for arr in (self.weights, self.means, self.scales, self._log_w):
            arr.setflags(write=False)

    @classmethod
    def normalized(cls, weights, means, scales) -> "GaussianMixture":
        """Build from unnormalized positive weights."""
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        return cls(w / w.sum(), means, scales)

    @classmethod
    def union(cls, mixtures, priors) -> "GaussianMixture":
        """Prior-weighted union of several mixtures over the same space."""
        priors = np.asarray(priors, dtype=np.float64)
        if len(mixtures) != len(priors) or not len(mixtures):
            raise ValueError("need one prior per mixture")
        if np.any(priors <= 0):
            raise ValueError("priors must be positive")
        priors = priors / priors.sum()
        dims = {m.dim for m in mixtures}
        if len(dims) != 1:
            raise ValueError(f"mixtures disagree on dimension: {sorted(dims)}")
        w = np.concatenate([p * m.weights for p, m in zip(priors, mixtures)])
        return cls(w / w.sum(), np.vstack([m.means for m in mixtures]),
                   np.concatenate([m.scales for m in mixtures]))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def _rows(self, x):
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        rows = np.ascontiguousarray(arr.reshape(1, -1) if single else arr)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {arr.shape}")
        if not np.isfinite(rows).all():
            raise ValueError("non-finite input point")
        return rows, single

    def eps(self, x, alpha: float):
        """Noise prediction for the marginal at signal level ``alpha``."""
        rows, single = self._rows(x)
        out = kernels.mixture_eps(rows, float(alpha), self._log_w, self.means, self.scales)
        return out[0] if single else out

    def logpdf(self, x, alpha: float = 1.0):
        """Log density of the marginal at ``alpha``; ``alpha=1`` is the clean density."""
        rows, single = self._rows(x)
        out = kernels.mixture_logpdf(rows, float(alpha), self._log_w, self.means, self.scales)
        return float(out[0]) if single else out

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights)
                and np.array_equal(self.means, other.means)
                and np.array_equal(self.scales, other.scales))

    def __repr__(self):
        return f"GaussianMixture(K={self.n_components}, d={self.dim})"


def cfg_combine(eps_cond, eps_uncond, scale: float):
    """Classifier-free guidance: ``eps_uncond + scale * (eps_cond - eps_uncond)``."""
    ec = np.asarray(eps_cond, dtype=np.float64)
    eu = np.asarray(eps_uncond, dtype=np.float64)
    if ec.shape != eu.shape:
        raise ValueError(f"shape mismatch {ec.shape} vs {eu.shape}")
    if scale < 0:
        raise ValueError(f"guidance scale must be >= 0, got {scale}")
    if scale == 1.0:
        return ec.copy()
    if scale == 0.0:
        return eu.copy()
    return eu + scale * (ec - eu)


class DiffusionOracle:
    """Closed-form conditional noise predictor.

    Args:
        schedule: The shared noise schedule.
        mixtures: Mapping from conditional tag to its data mixture.
        priors: Optional prior weight per condition, used to build the
            unconditional mixture. Defaults to equal weights.
    """

    def __init__(self, schedule: NoiseSchedule, mixtures: Mapping[Condition, GaussianMixture],
                 priors: Mapping[Condition, float] | None = None):
        if not mixtures:
            raise ValueError("at least one conditional mixture is required")
        conds = sorted(as_condition(c) for c in mixtures)
        self.schedule = schedule
        self.mixtures = {as_condition(c): m for c, m in mixtures.items()}
        if Condition.unconditional() in self.mixtures:
            raise ValueError("the unconditional mixture is derived, not registered")
        pri = {as_condition(c): float(v) for c, v in (priors or {}).items()}
        extra = set(pri) - set(self.mixtures)
        if extra:
            raise UnknownConditionError(f"priors for unregistered conditions: {sorted(map(str, extra))}")
        self.priors = {c: pri.get(c, 1.0) for c in conds}
        self.unconditional = GaussianMixture.union(
            [self.mixtures[c] for c in conds], [self.priors[c] for c in conds])
        self.dim = self.unconditional.dim

    @property
    def conditions(self) -> list:
        return sorted(self.mixtures)

    def mixture(self, y) -> GaussianMixture:
        y = as_condition(y)
        if y.kind == "unconditional":
            return self.unconditional
        try:
            return self.mixtures[y]
        except KeyError:
            raise UnknownConditionError(f"condition {y} is not registered") from None

    def eps_predict(self, x, t: float, y, guidance: float = 1.0):
        """Predicted noise at ``(x, t)`` under ``y`` with CFG scale ``guidance``.

        Args:
            x: A point of shape (d,) or a batch of shape (n, d).
            t: Time in ``[0, T]``.
            y: Condition or its string form.
            guidance: CFG scale; 1 gives the plain conditional prediction.

        Returns:
            Array with the shape of ``x``.
        """
        mix = self.mixture(y)
        alpha = self.schedule.alpha_bar(t)
        eps_c = mix.eps(x, alpha)
        if guidance == 1.0 or mix is self.unconditional:
            return eps_c
        return cfg_combine(eps_c, self.unconditional.eps(x, alpha), guidance)

    def posterior_x0(self, x, t: float, y, guidance: float = 1.0):
        """One-step data prediction ``x / sqrt(a) - sigma(t) * eps``."""
        eps = self.eps_predict(x, t, y, guidance)
        return np.asarray(x, dtype=np.float64) / self.schedule.signal(t) - self.schedule.sigma(t) * eps

    def log_marginal(self, x, t: float, y):
        """Log density of the noised marginal p_t(x | y)."""
        return self.mixture(y).logpdf(x, self.schedule.alpha_bar(t))

    def log_density0(self, x, y):
        """Log density of the clean data distribution p_0(x | y)."""
        return self.mixture(y).logpdf(x, 1.0)
