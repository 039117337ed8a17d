"""Proximal diffusion sampling toolkit.

Backward-discretized (proximal) and score-based reverse-diffusion samplers
over exactly tractable Gaussian-mixture targets, a proximal-matching trainer
for learned proximal operators, closed-form evaluation metrics, and numeric
verification of the convergence-theory lemmas.
"""

from .schedule import (
    ScheduleSpec,
    TimeGrid,
    StepWeights,
    constant_schedule,
    linear_schedule,
    beta_at,
    beta_integral,
    alpha_bar,
    make_uniform_grid,
    step_weights,
)
from .mixture import (
    GaussianMixture,
    ProxQuery,
    ProxResult,
    ProxSolverError,
    marginal_at,
    ve_marginal_at,
    sample_target,
    prox_log_density,
    prox_log_density_batch,
    mixture_from_points,
    load_points_csv,
)

__version__ = "0.1.0"
