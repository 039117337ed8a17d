"""Noise schedules, time grids, and the scalar quantities derived from beta(t).

Two schedule families are supported: a constant rate beta(t) = beta, and a
linear ramp from beta_min at t=0 to beta_max at t=T.  All integrated
quantities (alpha_bar, per-interval step weights) use exact antiderivatives,
never quadrature, so grid refinement studies are free of integration error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScheduleSpec",
    "TimeGrid",
    "StepWeights",
    "constant_schedule",
    "linear_schedule",
    "beta_at",
    "beta_integral",
    "alpha_bar",
    "make_uniform_grid",
    "step_weights",
]


@dataclass(frozen=True)
class ScheduleSpec:
    """Noise schedule beta(t) on the horizon [0, T].

    kind is "constant" (beta_min == beta_max) or "linear" (ramp from
    beta_min at t=0 to beta_max at t=T).
    """

    kind: str
    beta_min: float
    beta_max: float
    horizon: float

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.beta_min > 0:
            raise ValueError("beta_min must be positive")
        if self.beta_max < self.beta_min:
            raise ValueError("beta_max must be >= beta_min")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


def constant_schedule(beta: float, horizon: float) -> ScheduleSpec:
    """beta(t) = beta for all t; beta=2 reproduces the standard OU setting."""
    return ScheduleSpec("constant", beta, beta, horizon)


def linear_schedule(beta_min: float, beta_max: float, horizon: float = 1.0) -> ScheduleSpec:
    return ScheduleSpec("linear", beta_min, beta_max, horizon)


def _check_time(spec: ScheduleSpec, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > spec.horizon):
        raise ValueError(f"time {t} outside [0, {spec.horizon}]")
    return t


def beta_at(spec: ScheduleSpec, t):
    """Evaluate beta(t).  Scalar or array t; domain error outside [0, T]."""
    t = _check_time(spec, t)
    if spec.kind == "constant":
        out = np.full_like(t, spec.beta_min)
    else:
        out = spec.beta_min + (spec.beta_max - spec.beta_min) * (t / spec.horizon)
    return out if out.ndim else float(out)


def beta_integral(spec: ScheduleSpec, t):
    """Exact B(t) = int_0^t beta(s) ds via the closed-form antiderivative."""
    t = _check_time(spec, t)
    if spec.kind == "constant":
        out = spec.beta_min * t
    else:
        out = spec.beta_min * t + (spec.beta_max - spec.beta_min) * t * t / (2.0 * spec.horizon)
    return out if out.ndim else float(out)


def alpha_bar(spec: ScheduleSpec, t):
    """exp(-int_0^t beta(s) ds); equals 1 at t=0 and decreases in t."""
    out = np.exp(-np.asarray(beta_integral(spec, t), dtype=float))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing knots t_0 = 0 < t_1 < ... < t_N = T.

    A single-knot grid [0] is the degenerate N = 0 case (no steps).
    """

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1 or knots.size < 1:
            raise ValueError("grid needs at least one knot")
        if knots[0] != 0.0:
            raise ValueError("first knot must be 0")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return self.knots.size - 1

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])


def make_uniform_grid(horizon: float, n_steps: int) -> TimeGrid:
    """N+1 equally spaced knots on [0, horizon]."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return TimeGrid(np.linspace(0.0, horizon, n_steps + 1))


@dataclass(frozen=True)
class StepWeights:
    """gamma_k = int_{t_{k-1}}^{t_k} beta(s) ds for k = 1..N (stored 0-based)."""

    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", gamma)
        if np.any(gamma <= 0):
            raise ValueError("all step weights must be positive")


def step_weights(spec: ScheduleSpec, grid: TimeGrid) -> StepWeights:
    """Exact per-interval integrals of beta over the grid.

    Computed as differences of the antiderivative, so the sum over intervals
    telescopes to int_0^T beta exactly (no quadrature error).
    """
    if grid.horizon != spec.horizon:
        raise ValueError(
            f"grid horizon {grid.horizon} does not match schedule horizon {spec.horizon}"
        )
    cum = beta_integral(spec, grid.knots)
    return StepWeights(np.diff(cum))
