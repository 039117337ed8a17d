"""Reverse-time diffusion samplers, forward- and backward-discretized.

All samplers share one driver (`run_sampler`) that iterates a time grid from
t_N = T down to t_0 = 0, drawing per-step Gaussian noise from a counter-based
Philox stream keyed by (seed, step index) so traces are bitwise reproducible.
Score-based steps consume the score at the current knot t_k; proximal steps
consume prox_{-lam ln p_{t_{k-1}}} at the previous knot, with noise injected
before the proximal map rather than after the drift.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from .mixture import GaussianMixture, ProxSolverError, marginal_at, prox_log_density_batch, ve_marginal_at
from .schedule import ScheduleSpec, TimeGrid, alpha_bar, step_weights

__all__ = [
    "METHODS",
    "StepSizeError",
    "SamplerError",
    "OracleHandle",
    "SamplerConfig",
    "SamplerTrace",
    "em_step",
    "score_ode_step",
    "pda_backward_step",
    "pda_hybrid_step",
    "pf_ode_prox_step",
    "ve_prox_step",
    "final_denoise",
    "run_sampler",
    "chain_noise",
    "trace_to_csv",
    "save_trace",
    "load_trace",
]

METHODS = (
    "score_sde",
    "score_sde_final_denoise",
    "score_ode",
    "pda_backward",
    "pda_hybrid",
    "ve_prox",
    "pf_ode_prox",
)

_SCORE_METHODS = ("score_sde", "score_sde_final_denoise", "score_ode")
_NOISELESS_METHODS = ("score_ode", "pf_ode_prox")

_TRACE_MAGIC = b"PDMT"
_TRACE_VERSION = 1


class StepSizeError(ValueError):
    """A step weight violates a hard constraint of the chosen discretization."""


class SamplerError(RuntimeError):
    """A sampler step failed; the message carries the step index context."""


def chain_noise(seed: int, stream: int, n_chains: int, dim: int) -> np.ndarray:
    """Standard-normal block from a Philox generator keyed by (seed, stream).

    Counter-based keying makes every (seed, stream, chain, coordinate) value a
    pure function of its indices, independent of evaluation order.
    """
    key = np.array([seed, stream], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((n_chains, dim))


# ----------------------------------------------------------------------
# oracle plumbing
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class OracleHandle:
    """Score and prox callables a sampler can draw on.

    score_fn(x, t) and prox_fn(x, t, lam) accept (d,) or (m, d) arrays.  The
    learned source only provides prox_fn.
    """

    dim: int
    source: str
    score_fn: object = None
    prox_fn: object = None

    @classmethod
    def exact(cls, base: GaussianMixture, spec: ScheduleSpec, tol: float = 1e-10,
              max_iter: int = 100) -> "OracleHandle":
        """Closed-form oracles for the VP forward marginals of a mixture target."""

        def score_fn(x, t):
            return marginal_at(base, spec, t).score(x)

        def prox_fn(x, t, lam):
            gm_t = marginal_at(base, spec, t)
            return _solve_prox(gm_t, x, lam, tol, max_iter)

        return cls(dim=base.dim, source="exact", score_fn=score_fn, prox_fn=prox_fn)

    @classmethod
    def exact_ve(cls, base: GaussianMixture, tol: float = 1e-10,
                 max_iter: int = 100) -> "OracleHandle":
        """Closed-form oracles for the VE forward marginals (variance sigma^2 + t)."""

        def score_fn(x, t):
            return ve_marginal_at(base, t).score(x)

        def prox_fn(x, t, lam):
            gm_t = ve_marginal_at(base, t)
            return _solve_prox(gm_t, x, lam, tol, max_iter)

        return cls(dim=base.dim, source="exact", score_fn=score_fn, prox_fn=prox_fn)

    @classmethod
    def learned(cls, model) -> "OracleHandle":
        """Route prox_fn to a trained proximal-residual network; no score."""

        def prox_fn(x, t, lam):
            return model.prox(x, t, lam)

        return cls(dim=model.dim, source="learned_pm", score_fn=None, prox_fn=prox_fn)


def _solve_prox(gm_t, x, lam, tol, max_iter):
    # gradient-norm tolerance rescaled by the subproblem curvature so the
    # accepted point is within ~tol of the minimizer in parameter space even
    # when the target is stiff (tiny component variances near t = 0)
    tol_eff = tol * max(1.0, lam / gm_t.variances.min())
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    u, _, _, _, _ = prox_log_density_batch(
        gm_t, np.atleast_2d(x), lam, tol=tol_eff, max_iter=max_iter
    )
    return u[0] if single else u


# ----------------------------------------------------------------------
# single-step updates
# ----------------------------------------------------------------------


def em_step(x, gamma: float, score, z):
    """Euler-Maruyama update x + gamma (x/2 + score) + sqrt(gamma) z."""
    if not gamma > 0:
        raise StepSizeError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    return x + gamma * (0.5 * x + np.asarray(score)) + np.sqrt(gamma) * np.asarray(z)


def score_ode_step(x, gamma: float, score):
    """Forward-Euler probability-flow update x + (gamma/2)(x + score)."""
    if gamma < 0:
        raise StepSizeError("gamma must be nonnegative")
    x = np.asarray(x, dtype=float)
    return x + 0.5 * gamma * (x + np.asarray(score))


def pda_backward_step(x, gamma: float, prox_fn, t_prev: float, z):
    """Fully backward update: prox of strength 2g/(2-g) at anchor (2/(2-g))(x + sqrt(g) z)."""
    if not 0 < gamma < 2:
        raise StepSizeError(f"backward step requires 0 < gamma < 2, got {gamma}")
    x = np.asarray(x, dtype=float)
    anchor = (2.0 / (2.0 - gamma)) * (x + np.sqrt(gamma) * np.asarray(z))
    return prox_fn(anchor, t_prev, 2.0 * gamma / (2.0 - gamma))


def pda_hybrid_step(x, gamma: float, prox_fn, t_prev: float, z):
    """Hybrid update: prox of strength g at anchor (1 + g/2) x + sqrt(g) z."""
    if not gamma > 0:
        raise StepSizeError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    anchor = (1.0 + 0.5 * gamma) * x + np.sqrt(gamma) * np.asarray(z)
    return prox_fn(anchor, t_prev, gamma)


def pf_ode_prox_step(x, gamma: float, prox_fn, t_prev: float):
    """Backward-discretized probability-flow step; deterministic."""
    if not 0 < gamma < 2:
        raise StepSizeError(f"prox ODE step requires 0 < gamma < 2, got {gamma}")
    x = np.asarray(x, dtype=float)
    return prox_fn((2.0 / (2.0 - gamma)) * x, t_prev, gamma / (2.0 - gamma))


def ve_prox_step(x, gamma: float, prox_fn, t_prev: float, z):
    """Variance-exploding proximal step: prox of strength g at x + sqrt(g) z."""
    if not gamma > 0:
        raise StepSizeError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    return prox_fn(x + np.sqrt(gamma) * np.asarray(z), t_prev, gamma)


def final_denoise(x, score_fn, t_eps: float, spec: ScheduleSpec):
    """One Tweedie cleanup pass x + (1 - abar(t_eps)) score(x, t_eps)."""
    if not t_eps > 0:
        raise ValueError("t_eps must be positive")
    x = np.asarray(x, dtype=float)
    return x + (1.0 - alpha_bar(spec, t_eps)) * np.asarray(score_fn(x, t_eps))


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    method: str
    schedule: ScheduleSpec
    grid: TimeGrid
    n_chains: int
    seed: int
    eps_last: float | None = None  # score_sde_final_denoise only; defaults to t_1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.grid.n_steps > 0 and self.grid.horizon != self.schedule.horizon:
            raise ValueError("grid horizon does not match schedule horizon")
        gammas = self.step_gammas()
        if self.method == "pda_backward" and np.any(gammas >= 2.0):
            raise StepSizeError(
                f"pda_backward requires every gamma_k < 2; max gamma is {gammas.max():g}"
            )
        if self.method == "score_sde_final_denoise" and self.eps_last is None:
            object.__setattr__(self, "eps_last", float(self.grid.knots[1]))

    def step_gammas(self) -> np.ndarray:
        if self.grid.n_steps == 0:
            return np.empty(0)
        if self.method == "ve_prox":
            return np.diff(self.grid.knots)
        return step_weights(self.schedule, self.grid).gamma


@dataclass(frozen=True)
class SamplerTrace:
    """Full chain history: states[k] holds the iterates at knot t_k.

    states[N] is the Gaussian initialization and states[0] the output set.
    """

    states: np.ndarray          # (N+1, n_chains, d)
    gammas: np.ndarray          # (N,)
    step_seconds: np.ndarray    # (N,)
    config: SamplerConfig

    @property
    def samples(self) -> np.ndarray:
        return self.states[0]


def run_sampler(cfg: SamplerConfig, oracle: OracleHandle) -> SamplerTrace:
    """Initialize chains from N(0, I) and iterate the configured update k = N..1."""
    needs_score = cfg.method in _SCORE_METHODS
    if needs_score and oracle.score_fn is None:
        raise ValueError(f"method {cfg.method!r} needs a score oracle")
    if not needs_score and oracle.prox_fn is None:
        raise ValueError(f"method {cfg.method!r} needs a prox oracle")
    if cfg.method == "score_sde_final_denoise" and oracle.score_fn is None:
        raise ValueError("final denoise needs a score oracle")

    knots = cfg.grid.knots
    n_steps = cfg.grid.n_steps
    gammas = cfg.step_gammas()
    d = oracle.dim

    states = np.empty((n_steps + 1, cfg.n_chains, d))
    states[n_steps] = chain_noise(cfg.seed, 0, cfg.n_chains, d)
    step_seconds = np.zeros(n_steps)

    x = states[n_steps]
    for k in range(n_steps, 0, -1):
        tic = time.perf_counter()
        gamma = float(gammas[k - 1])
        t_prev, t_cur = float(knots[k - 1]), float(knots[k])
        z = None
        if cfg.method not in _NOISELESS_METHODS:
            z = chain_noise(cfg.seed, k, cfg.n_chains, d)
        try:
            if cfg.method in ("score_sde", "score_sde_final_denoise"):
                x = em_step(x, gamma, oracle.score_fn(x, t_cur), z)
            elif cfg.method == "score_ode":
                x = score_ode_step(x, gamma, oracle.score_fn(x, t_cur))
            elif cfg.method == "pda_backward":
                x = pda_backward_step(x, gamma, oracle.prox_fn, t_prev, z)
            elif cfg.method == "pda_hybrid":
                x = pda_hybrid_step(x, gamma, oracle.prox_fn, t_prev, z)
            elif cfg.method == "ve_prox":
                x = ve_prox_step(x, gamma, oracle.prox_fn, t_prev, z)
            elif cfg.method == "pf_ode_prox":
                x = pf_ode_prox_step(x, gamma, oracle.prox_fn, t_prev)
        except ProxSolverError as err:
            raise SamplerError(f"prox solve failed at step k={k} (t={t_prev:g}): {err}") from err
        states[k - 1] = x
        step_seconds[k - 1] = time.perf_counter() - tic

    if cfg.method == "score_sde_final_denoise" and n_steps > 0:
        states[0] = final_denoise(states[0], oracle.score_fn, cfg.eps_last, cfg.schedule)

    return SamplerTrace(states=states, gammas=gammas, step_seconds=step_seconds, config=cfg)


# ----------------------------------------------------------------------
# trace export
# ----------------------------------------------------------------------


def trace_to_csv(trace: SamplerTrace, path) -> None:
    """Rows (chain, step, x_0..x_{d-1}) ordered by chain then step index."""
    n_states, n_chains, d = trace.states.shape
    with open(path, "w") as fh:
        fh.write("chain,step," + ",".join(f"x{j}" for j in range(d)) + "\n")
        for chain in range(n_chains):
            for k in range(n_states):
                coords = ",".join(f"{v:.17g}" for v in trace.states[k, chain])
                fh.write(f"{chain},{k},{coords}\n")


def save_trace(trace: SamplerTrace, path) -> None:
    """Compact dump: magic 'PDMT', version u32, N u32, n_chains u32, d u32, f64 data."""
    n_states, n_chains, d = trace.states.shape
    with open(path, "wb") as fh:
        fh.write(_TRACE_MAGIC)
        fh.write(struct.pack("<IIII", _TRACE_VERSION, n_states - 1, n_chains, d))
        fh.write(trace.states.astype("<f8").tobytes())


def load_trace(path) -> np.ndarray:
    """States array from a binary trace dump (shape (N+1, n_chains, d))."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _TRACE_MAGIC:
            raise ValueError(f"bad trace magic {magic!r}")
        version, n_steps, n_chains, d = struct.unpack("<IIII", fh.read(16))
        if version != _TRACE_VERSION:
            raise ValueError(f"unsupported trace version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(n_steps + 1, n_chains, d)
