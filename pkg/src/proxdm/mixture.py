"""Exact target distributions: isotropic Gaussian mixtures.

Everything a diffusion sampler may ask of its target is available in closed
form here: log-density, score, Hessian of the log-density, forward-process
marginals, MMSE denoising, and proximal (MAP-denoising) operators.  The
proximal subproblem is nonconvex for mixtures and is solved by a damped
Newton method with eigenvalue-clipped curvature and an Armijo backtracking
line search, run from two starts (the anchor and the MMSE point).

Points with shape (d,) or batches with shape (m, d) are accepted throughout;
batched proximal solves share one vectorized Newton loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .schedule import ScheduleSpec, alpha_bar

__all__ = [
    "GaussianMixture",
    "ProxQuery",
    "ProxResult",
    "ProxSolverError",
    "marginal_at",
    "ve_marginal_at",
    "sample_target",
    "prox_log_density",
    "prox_log_density_batch",
    "mixture_from_points",
    "load_points_csv",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture sum_i w_i N(mu_i, sigma_i^2 I_d) with isotropic components.

    weights: (k,) probabilities summing to 1 (within 1e-12)
    means: (k, d)
    variances: (k,) positive
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if w.ndim != 1 or mu.ndim != 2 or var.ndim != 1:
            raise ValueError("weights/variances must be 1-d, means 2-d")
        if not (w.size == mu.shape[0] == var.size) or w.size < 1:
            raise ValueError("component counts disagree")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    # ------------------------------------------------------------------
    # density, score, Hessian
    # ------------------------------------------------------------------

    def _component_logpdf(self, x: np.ndarray) -> np.ndarray:
        """log(w_i N(x; mu_i, sigma_i^2 I)) for x of shape (m, d) -> (m, k)."""
        d = self.dim
        # ||x - mu||^2 expanded so the cross term is a single GEMM
        sq = (
            np.sum(x * x, axis=1)[:, None]
            - 2.0 * x @ self.means.T
            + np.sum(self.means * self.means, axis=1)[None, :]
        )
        return (
            np.log(self.weights)[None, :]
            - 0.5 * d * (_LOG_2PI + np.log(self.variances))[None, :]
            - 0.5 * sq / self.variances[None, :]
        )

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {x.shape}")
        return x, single

    def log_density(self, x):
        """ln sum_i w_i N(x; mu_i, sigma_i^2 I), max-shift stabilized."""
        xb, single = self._as_batch(x)
        out = logsumexp(self._component_logpdf(xb), axis=1)
        return float(out[0]) if single else out

    def responsibilities(self, x):
        xb, single = self._as_batch(x)
        lp = self._component_logpdf(xb)
        r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        return r[0] if single else r

    def score(self, x):
        """Gradient of the log-density: sum_i r_i(x) (mu_i - x) / sigma_i^2."""
        xb, single = self._as_batch(x)
        r = self.responsibilities(xb)
        rw = r / self.variances[None, :]                      # (m, k)
        out = rw @ self.means - rw.sum(axis=1)[:, None] * xb  # (m, d)
        return out[0] if single else out

    def hessian_log_density(self, x):
        """Exact Hessian of ln p: E_r[per-component Hessian] + Cov_r(per-component score).

        Returns (d, d) for a single point, (m, d, d) for a batch.
        """
        xb, single = self._as_batch(x)
        m, d = xb.shape
        r = self.responsibilities(xb)
        inv_var = 1.0 / self.variances
        rw = r * inv_var[None, :]                              # r_i / sigma_i^2
        g_mean = rw @ self.means - rw.sum(axis=1)[:, None] * xb
        # E[g g^T] with g_i = (mu_i - x)/sigma_i^2, expanded into GEMM-able pieces
        rww = rw * inv_var[None, :]                            # r_i / sigma_i^4
        s0 = rww.sum(axis=1)                                   # (m,)
        s1 = rww @ self.means                                  # (m, d)
        s2 = np.einsum("mk,ki,kj->mij", rww, self.means, self.means)
        egg = (
            s2
            - s1[:, :, None] * xb[:, None, :]
            - xb[:, :, None] * s1[:, None, :]
            + s0[:, None, None] * (xb[:, :, None] * xb[:, None, :])
        )
        h = egg - g_mean[:, :, None] * g_mean[:, None, :]
        h -= rw.sum(axis=1)[:, None, None] * np.eye(d)[None, :, :]
        return h[0] if single else h

    def mmse_denoise(self, x, sigma2: float):
        """Posterior-mean denoiser x + sigma2 * score(x) (Tweedie)."""
        if sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        x = np.asarray(x, dtype=float)
        return x + sigma2 * self.score(x)

    # ------------------------------------------------------------------
    # moments and sampling
    # ------------------------------------------------------------------

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def second_moment(self) -> float:
        """E ||x||^2 = sum_i w_i (||mu_i||^2 + d sigma_i^2)."""
        return float(
            self.weights @ (np.sum(self.means**2, axis=1) + self.dim * self.variances)
        )

    def sample(self, n: int, seed) -> np.ndarray:
        """n i.i.d. draws: categorical component choice, then Gaussian."""
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        return self.means[idx] + np.sqrt(self.variances[idx])[:, None] * eps


def sample_target(gm: GaussianMixture, n: int, seed) -> np.ndarray:
    return gm.sample(n, seed)


def mixture_from_points(points, sigma2: float = 1e-6) -> GaussianMixture:
    """Equal-weight mixture smoothing a point cloud so ln p exists everywhere."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    return GaussianMixture(np.full(n, 1.0 / n), points, np.full(n, float(sigma2)))


def load_points_csv(path) -> np.ndarray:
    """Point cloud from CSV: one row per point, d columns, header optional."""
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
    except ValueError:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float, skiprows=1))


# ----------------------------------------------------------------------
# forward-process marginals
# ----------------------------------------------------------------------


def marginal_at(base: GaussianMixture, spec: ScheduleSpec, t: float) -> GaussianMixture:
    """Law of sqrt(abar_t) X_0 + sqrt(1 - abar_t) eps for X_0 ~ base (VP process)."""
    abar = alpha_bar(spec, t)
    return GaussianMixture(
        base.weights,
        np.sqrt(abar) * base.means,
        abar * base.variances + (1.0 - abar),
    )


def ve_marginal_at(base: GaussianMixture, t: float) -> GaussianMixture:
    """Law of X_0 + W_t for X_0 ~ base (variance-exploding process)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return GaussianMixture(base.weights, base.means, base.variances + t)


# ----------------------------------------------------------------------
# proximal operator of -lambda ln p
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ProxQuery:
    """Anchor point and regularization strength for one proximal evaluation."""

    lam: float
    anchor: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))


@dataclass(frozen=True)
class ProxResult:
    point: np.ndarray
    objective: float
    grad_residual_norm: float
    iterations: int
    multistart_winner: int


class ProxSolverError(RuntimeError):
    """Newton failed to reach the gradient tolerance from every start."""

    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


def _prox_objective(gm: GaussianMixture, lam: float, anchors: np.ndarray, u: np.ndarray):
    return -lam * gm.log_density(u) + 0.5 * np.sum((u - anchors) ** 2, axis=1)


def _newton_from(gm, lam, anchors, u0, tol, max_iter):
    """Damped Newton on g(u) = -lam ln p(u) + 0.5||u - anchor||^2, batched over rows.

    Returns (points, objectives, residual norms, iterations used).  Rows that
    reach ||grad g|| <= tol become inactive; the rest keep iterating.
    """
    m, d = u0.shape
    u = u0.copy()
    obj = _prox_objective(gm, lam, anchors, u)
    grad = (u - anchors) - lam * gm.score(u)
    res = np.linalg.norm(grad, axis=1)
    iters = np.zeros(m, dtype=int)
    active = res > tol

    for _ in range(max_iter):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        ua, ga = u[idx], grad[idx]
        hess = -lam * gm.hessian_log_density(ua)
        hess[:, np.arange(d), np.arange(d)] += 1.0
        # saddle-free modified Newton: flip negative curvature by taking |eig|
        # and floor tiny eigenvalues, so the step is always a descent direction
        evals, evecs = np.linalg.eigh(hess)
        floor = 1e-8 * np.maximum(1.0, np.abs(evals).max(axis=1, keepdims=True))
        evals = np.maximum(np.abs(evals), floor)
        step = -np.einsum("mij,mj->mi", evecs, np.einsum("mji,mj->mi", evecs, ga) / evals)
        descent = np.einsum("mi,mi->m", ga, step)

        # cap the first trial so clipped directions cannot fling the iterate away
        step_norm = np.linalg.norm(step, axis=1)
        trust = 10.0 * (1.0 + np.linalg.norm(ua, axis=1))
        alpha = np.minimum(1.0, trust / step_norm)

        # quadratic endgame: once the Newton step is tiny the Armijo test
        # saturates at the objective's float resolution, so take it as is
        tiny = step_norm <= 1e-6 * (1.0 + np.linalg.norm(ua, axis=1))
        accepted = tiny.copy()
        u_new = ua.copy()
        obj_new = obj[idx].copy()
        if np.any(tiny):
            u_new[tiny] = ua[tiny] + step[tiny]
            obj_new[tiny] = _prox_objective(gm, lam, anchors[idx][tiny], u_new[tiny])
        for _ls in range(40):
            if np.all(accepted):
                break
            trial = ua + alpha[:, None] * step
            obj_trial = _prox_objective(gm, lam, anchors[idx], trial)
            ok = ~accepted & (obj_trial <= obj[idx] + 1e-4 * alpha * descent)
            u_new[ok] = trial[ok]
            obj_new[ok] = obj_trial[ok]
            accepted |= ok
            alpha[~accepted] *= 0.5
        # rows whose line search found no decrease are at float resolution; stop them
        moved = accepted
        u[idx[moved]] = u_new[moved]
        obj[idx[moved]] = obj_new[moved]
        iters[idx] += 1

        grad_idx = (u[idx] - anchors[idx]) - lam * gm.score(u[idx])
        grad[idx] = grad_idx
        res[idx] = np.linalg.norm(grad_idx, axis=1)
        active[idx] = moved & (res[idx] > tol)

    return u, obj, res, iters


def prox_log_density_batch(
    gm: GaussianMixture,
    anchors: np.ndarray,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 100,
):
    """prox_{-lam ln p}(anchor) for each row of anchors, with multistart.

    Start 0 is the anchor itself, start 1 the MMSE point x + lam * score(x);
    per row the converged start with the lower objective wins.  Raises
    ProxSolverError listing the failed rows if any row converges from
    neither start.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    starts = [anchors, gm.mmse_denoise(anchors, lam)]
    results = [_newton_from(gm, lam, anchors, s, tol, max_iter) for s in starts]

    u0, obj0, res0, it0 = results[0]
    u1, obj1, res1, it1 = results[1]
    ok0, ok1 = res0 <= tol, res1 <= tol
    # lower objective among converged starts; fall back to the better residual
    pick1 = (ok1 & ~ok0) | (ok1 & ok0 & (obj1 < obj0)) | (~ok0 & ~ok1 & (res1 < res0))
    u = np.where(pick1[:, None], u1, u0)
    obj = np.where(pick1, obj1, obj0)
    res = np.where(pick1, res1, res0)
    iters = np.where(pick1, it1, it0)
    winner = pick1.astype(int)

    failed = ~(ok0 | ok1)
    if np.any(failed):
        rows = np.flatnonzero(failed)
        shown = ", ".join(map(str, rows[:8])) + (", ..." if rows.size > 8 else "")
        raise ProxSolverError(
            f"prox solver failed on {rows.size} of {anchors.shape[0]} anchors "
            f"(lam={lam:g}, rows [{shown}]); best residual {res[failed].min():.3e}",
            best_residual=float(res[failed].min()),
        )
    return u, obj, res, iters, winner


def prox_log_density(
    gm: GaussianMixture,
    query: ProxQuery,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> ProxResult:
    """Stationary point of -lam ln p(u) + 0.5||u - anchor||^2 with ||grad|| <= tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    u, obj, res, iters, winner = prox_log_density_batch(
        gm, query.anchor[None, :], query.lam, tol=tol, max_iter=max_iter
    )
    return ProxResult(
        point=u[0],
        objective=float(obj[0]),
        grad_residual_norm=float(res[0]),
        iterations=int(iters[0]),
        multistart_winner=int(winner[0]),
    )
