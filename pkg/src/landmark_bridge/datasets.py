"""Synthetic landmark configurations."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .geometry import LandmarkConfig
from .sde import rng_stream


def make_ellipse(n_landmarks: int = 10, axes=(1.0, 0.5), center=(0.0, 0.0)) -> LandmarkConfig:
    """Landmarks at angles ``2 pi i / n`` on an axis-aligned ellipse."""
    if n_landmarks < 3:
        raise InvalidArgumentError(f"need at least 3 landmarks, got {n_landmarks}")
    a, b = (float(x) for x in axes)
    if a <= 0 or b <= 0:
        raise InvalidArgumentError("ellipse axes must be positive")
    theta = 2 * np.pi * np.arange(n_landmarks) / n_landmarks
    pts = np.stack([a * np.cos(theta) + center[0], b * np.sin(theta) + center[1]], axis=1)
    return LandmarkConfig(pts)


def mean_interpoint_distance(q: LandmarkConfig) -> float:
    """Mean Euclidean distance over all unordered landmark pairs."""
    pos = q.positions
    n = pos.shape[0]
    if n < 2:
        raise InvalidArgumentError("need at least two landmarks")
    iu = np.triu_indices(n, 1)
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    return float(dist[iu].mean())


def synthetic_cardiac(n_configs: int = 14, n_landmarks: int = 17, seed: int = 0,
                      noise: float = 0.03) -> np.ndarray:
    """Stand-in for annotated left-ventricle outlines.

    A C-shaped open contour (an arc of about 300 degrees) with per-configuration
    random scaling, rotation, translation and per-landmark jitter. Returns an
    array ``(n_configs, n_landmarks, 2)``.
    """
    rng = rng_stream(seed)
    s = np.linspace(0.0, 1.0, n_landmarks)
    angle = np.deg2rad(30 + 300 * s)
    base = np.stack([np.cos(angle), 0.8 * np.sin(angle)], axis=1)
    out = np.empty((n_configs, n_landmarks, 2))
    for c in range(n_configs):
        scale = 1.0 + 0.08 * rng.standard_normal()
        rot = 0.05 * rng.standard_normal()
        R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
        shift = 0.05 * rng.standard_normal(2)
        out[c] = scale * base @ R.T + shift + noise * rng.standard_normal((n_landmarks, 2))
    return out
