"""Analytic test-scene generators.

Stand-ins for captured objects: deterministic volumes with known geometry so
renders, octrees and proxy meshes can be checked against closed-form answers.
All scenes live in the unit cube [-0.5, 0.5]^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import DenseVolume

SCENE_NAMES = ("sphere", "box", "lobed-sphere", "two-spheres")
VALID_RESOLUTIONS = (8, 16, 32, 64, 128, 256)

AABB_MIN = np.array([-0.5, -0.5, -0.5])
AABB_MAX = np.array([0.5, 0.5, 0.5])

SPHERE_RADIUS = 0.4        # fraction of the box edge
LOBE_COEFF = 2.0           # degree-1 z coefficient for the lobed sphere


class UnknownScene(ValueError):
    """Scene name not in the generator catalog."""


@dataclass(frozen=True)
class SceneSpec:
    name: str
    resolution: int = 32
    density_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.name not in SCENE_NAMES:
            raise UnknownScene(f"unknown scene {self.name!r}; know {SCENE_NAMES}")
        if self.resolution not in VALID_RESOLUTIONS:
            raise ValueError(f"resolution must be one of {VALID_RESOLUTIONS}")
        if self.density_scale <= 0:
            raise ValueError("density_scale must be positive")


def _cell_centers(n: int) -> np.ndarray:
    """(n,n,n,3) world positions of cell centers."""
    axis = AABB_MIN[0] + (np.arange(n) + 0.5) / n * (AABB_MAX[0] - AABB_MIN[0])
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def generate_scene(spec: SceneSpec) -> DenseVolume:
    """Deterministic dense volume for the named analytic scene."""
    n = spec.resolution
    centers = _cell_centers(n)
    sigma = np.zeros((n, n, n), dtype=np.float32)
    sh = np.zeros((n, n, n, 3, 9), dtype=np.float32)

    if spec.name == "sphere":
        r = np.linalg.norm(centers, axis=-1)
        sigma[r < SPHERE_RADIUS] = spec.density_scale
        # all-zero SH -> constant gray 0.5 after the logistic
    elif spec.name == "lobed-sphere":
        r = np.linalg.norm(centers, axis=-1)
        inside = r < SPHERE_RADIUS
        sigma[inside] = spec.density_scale
        sh[inside, :, 2] = LOBE_COEFF  # (1,0) term: color swings with view z
    elif spec.name == "box":
        c = np.abs(centers)
        inside = (c[..., 0] < 0.3) & (c[..., 1] < 0.2) & (c[..., 2] < 0.3)
        sigma[inside] = spec.density_scale
    elif spec.name == "two-spheres":
        rng = np.random.default_rng(spec.seed)
        for offset in (np.array([-0.25, 0.0, 0.0]), np.array([0.25, 0.0, 0.0])):
            r = np.linalg.norm(centers - offset, axis=-1)
            inside = r < 0.18
            sigma[inside] = spec.density_scale
            tint = rng.uniform(-1.5, 1.5, size=3).astype(np.float32)
            sh[inside, :, 0] = tint  # constant term per channel
    return DenseVolume(AABB_MIN, AABB_MAX, sigma, sh)
