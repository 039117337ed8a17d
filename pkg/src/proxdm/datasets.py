"""Built-in 2D targets used by the demos, fixtures, and acceptance runs."""

from __future__ import annotations

import numpy as np

from .mixture import GaussianMixture, mixture_from_points

__all__ = ["eight_mode_gmm", "spiral_cloud", "builtin_target", "BUILTIN_TARGETS"]


def eight_mode_gmm(radius: float = 2.0, sigma2: float = 0.05) -> GaussianMixture:
    """Equal-weight mixture with 8 modes on a circle."""
    angles = 2.0 * np.pi * np.arange(8) / 8.0
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GaussianMixture(np.full(8, 0.125), means, np.full(8, sigma2))


def spiral_cloud(n: int = 1000, turns: float = 1.75, jitter: float = 0.02,
                 seed: int = 7) -> np.ndarray:
    """Deterministic two-armed spiral point cloud, roughly within [-2.5, 2.5]^2."""
    half = n // 2
    rng = np.random.default_rng(seed)
    u = np.sqrt(np.linspace(0.05, 1.0, half))
    theta = 2.0 * np.pi * turns * u
    r = 2.3 * u
    arm = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    pts = np.concatenate([arm, -arm[: n - half]])
    return pts + jitter * rng.standard_normal(pts.shape)


BUILTIN_TARGETS = ("gmm-8", "spiral")


def builtin_target(name: str, smoothing: float = 1e-6) -> GaussianMixture:
    """Named built-in target as a GaussianMixture (clouds get smoothed)."""
    if name == "gmm-8":
        return eight_mode_gmm()
    if name == "spiral":
        return mixture_from_points(spiral_cloud(), sigma2=smoothing)
    raise ValueError(f"unknown builtin target {name!r}; choose from {BUILTIN_TARGETS}")
