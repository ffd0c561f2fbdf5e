"""Volumetric radiance backends: dense grid (oracle) and sparse octree.

Both store a density ``sigma`` per cell plus 27 spherical-harmonics color
coefficients (3 channels x 9 real SH basis functions, degrees 0-2). Rendering
is fixed-step emission-absorption ray marching with nearest-cell lookup; the
octree skips empty space but is otherwise numerically identical to the dense
path, so a losslessly built octree renders equal to its source volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from io import BytesIO

import numpy as np

from . import kernels
from .math3d import Camera, Ray, generate_rays

MAX_OCTREE_RES = 1024  # 2**10 cells per axis


class NonUnitDirection(ValueError):
    """Direction vector is not unit length."""


class ResolutionOverflow(ValueError):
    """Padded octree resolution exceeds 1024 cells per axis."""


def eval_sh_basis(direction) -> np.ndarray:
    """The 9 real SH basis values (degrees 0-2) at a unit direction.

    Ordering: (0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2).
    """
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,):
        raise ValueError("direction must be a 3-vector")
    if abs(float(np.linalg.norm(d)) - 1.0) > 1e-4:
        raise NonUnitDirection(f"|direction| = {np.linalg.norm(d):.6f}, expected 1")
    return kernels.sh_basis(d)


@dataclass(frozen=True)
class DenseVolume:
    """Regular grid of density and SH color coefficients.

    sigma: (nx,ny,nz) float32, >= 0, units 1/world-unit
    sh:    (nx,ny,nz,3,9) float32, unbounded
    """
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    sigma: np.ndarray
    sh: np.ndarray

    def __post_init__(self):
        amin = np.asarray(self.aabb_min, dtype=np.float64)
        amax = np.asarray(self.aabb_max, dtype=np.float64)
        if amin.shape != (3,) or amax.shape != (3,):
            raise ValueError("aabb bounds must be 3-vectors")
        if not np.all(amin < amax):
            raise ValueError("aabb_min must be strictly below aabb_max componentwise")
        sigma = np.ascontiguousarray(self.sigma, dtype=np.float32)
        if sigma.ndim != 3 or min(sigma.shape) < 1:
            raise ValueError("sigma must be a non-empty 3D array")
        if np.any(sigma < 0):
            raise ValueError("sigma must be non-negative everywhere")
        sh = np.ascontiguousarray(self.sh, dtype=np.float32)
        if sh.shape != sigma.shape + (3, 9):
            raise ValueError(f"sh shape must be {sigma.shape + (3, 9)}, got {sh.shape}")
        object.__setattr__(self, "aabb_min", amin)
        object.__setattr__(self, "aabb_max", amax)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "sh", sh)

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.sigma.shape

    @property
    def cell_size(self) -> np.ndarray:
        return (self.aabb_max - self.aabb_min) / np.array(self.resolution)

    @property
    def voxel_size(self) -> float:
        return float(np.min(self.cell_size))

    def sh_flat(self) -> np.ndarray:
        """(nx,ny,nz,27) channel-major view for the kernels."""
        return self.sh.reshape(self.sigma.shape + (27,))


@dataclass(frozen=True)
class SparseOctree:
    """Pruned hierarchical grid over a cubic box of 2**max_depth cells per axis.

    Flattened node encoding, shared with the kernels: ``children[i, c]`` holds
    a code per child c (bit pattern zyx): >= 0 is an internal node index,
    -1 an Empty leaf, <= -2 an Occupied leaf with payload index ``-code - 2``.
    ``root`` uses the same encoding.
    """
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    max_depth: int
    root: int
    children: np.ndarray     # (n_internal, 8) int32
    leaf_sigma: np.ndarray   # (n_occupied,) float32
    leaf_sh: np.ndarray      # (n_occupied, 27) float32

    def __post_init__(self):
        object.__setattr__(self, "aabb_min", np.asarray(self.aabb_min, dtype=np.float64))
        object.__setattr__(self, "aabb_max", np.asarray(self.aabb_max, dtype=np.float64))
        object.__setattr__(self, "children",
                           np.ascontiguousarray(self.children, dtype=np.int32).reshape(-1, 8))
        object.__setattr__(self, "leaf_sigma",
                           np.ascontiguousarray(self.leaf_sigma, dtype=np.float32))
        object.__setattr__(self, "leaf_sh",
                           np.ascontiguousarray(self.leaf_sh, dtype=np.float32).reshape(-1, 27))
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    @property
    def resolution(self) -> int:
        return 1 << self.max_depth

    @property
    def voxel_size(self) -> float:
        return float(np.min((self.aabb_max - self.aabb_min) / self.resolution))

    @property
    def occupied_leaf_count(self) -> int:
        return len(self.leaf_sigma)

    @property
    def internal_node_count(self) -> int:
        return len(self.children)

    @property
    def empty_leaf_count(self) -> int:
        if self.root == -1:
            return 1
        return int(np.count_nonzero(self.children == -1))


@dataclass(frozen=True)
class RenderSettings:
    """step_size None means voxel_size / 2 of the rendered backend."""
    step_size: float | None = None
    early_stop_transmittance: float = 1e-3
    background: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not (0.0 < self.early_stop_transmittance < 1.0):
            raise ValueError("early_stop_transmittance must lie in (0, 1)")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 4:
            raise ValueError("background must be RGBA")
        object.__setattr__(self, "background", bg)

    def resolved_step(self, backend) -> float:
        return self.step_size if self.step_size is not None else backend.voxel_size / 2.0


@dataclass(frozen=True)
class RenderedImage:
    """Straight-alpha RGBA image, float32 in [0,1] internally, RGBA8 at interfaces."""
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 4) float32

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if px.shape != (self.height, self.width, 4):
            raise ValueError(f"pixels must have shape {(self.height, self.width, 4)}")
        object.__setattr__(self, "pixels", px)

    def to_rgba8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)

    @classmethod
    def from_rgba8(cls, data: np.ndarray) -> "RenderedImage":
        data = np.asarray(data, dtype=np.uint8)
        h, w = data.shape[:2]
        return cls(w, h, data.astype(np.float32) / 255.0)

    def to_png_bytes(self) -> bytes:
        from PIL import Image
        buf = BytesIO()
        Image.fromarray(self.to_rgba8(), mode="RGBA").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "RenderedImage":
        from PIL import Image
        img = Image.open(BytesIO(data)).convert("RGBA")
        return cls.from_rgba8(np.asarray(img))


def _check_ray(ray: Ray):
    if abs(float(np.linalg.norm(ray.direction)) - 1.0) > 1e-6:
        raise NonUnitDirection("ray direction must be unit length")


def _render_rays(backend, origins: np.ndarray, dirs: np.ndarray,
                 settings: RenderSettings) -> np.ndarray:
    origins = np.ascontiguousarray(origins.reshape(-1, 3), dtype=np.float64)
    dirs = np.ascontiguousarray(dirs.reshape(-1, 3), dtype=np.float64)
    bg = np.asarray(settings.background, dtype=np.float64)
    step = settings.resolved_step(backend)
    if isinstance(backend, DenseVolume):
        return kernels.render_rays_dense(
            origins, dirs, backend.aabb_min, backend.aabb_max,
            backend.sigma, backend.sh_flat(),
            step, settings.early_stop_transmittance, bg)
    if isinstance(backend, SparseOctree):
        return kernels.render_rays_octree(
            origins, dirs, backend.aabb_min, backend.aabb_max,
            backend.max_depth, backend.root, backend.children,
            backend.leaf_sigma, backend.leaf_sh,
            step, settings.early_stop_transmittance, bg)
    raise TypeError(f"unsupported render backend {type(backend).__name__}")


def render_ray_dense(volume: DenseVolume, ray: Ray,
                     settings: RenderSettings = RenderSettings()) -> np.ndarray:
    """Straight-alpha RGBA (float32, 4) for a single ray through the dense grid."""
    _check_ray(ray)
    return _render_rays(volume, ray.origin[None, :], ray.direction[None, :], settings)[0]


def render_ray_octree(octree: SparseOctree, ray: Ray,
                      settings: RenderSettings = RenderSettings()) -> np.ndarray:
    """Straight-alpha RGBA (float32, 4) for a single ray through the octree."""
    _check_ray(ray)
    return _render_rays(octree, ray.origin[None, :], ray.direction[None, :], settings)[0]


def render_frame(backend, camera: Camera,
                 settings: RenderSettings = RenderSettings()) -> RenderedImage:
    """Per-pixel render of the backend through the camera."""
    origins, dirs = generate_rays(camera)
    rgba = _render_rays(backend, origins, dirs, settings)
    return RenderedImage(camera.width, camera.height,
                         rgba.reshape(camera.height, camera.width, 4))


def build_octree(volume: DenseVolume, prune_threshold: float = 0.0) -> SparseOctree:
    """Octree over the volume padded to a 2**d cube of cells.

    A subtree whose cells all have sigma <= prune_threshold collapses to one
    Empty leaf; every other cell becomes a depth-d Occupied leaf carrying its
    sigma/SH unchanged, so prune_threshold 0 is lossless for rendering.
    """
    if prune_threshold < 0:
        raise ValueError("prune_threshold must be >= 0")
    nx, ny, nz = volume.resolution
    side = 1 << max(1, math.ceil(math.log2(max(nx, ny, nz))))
    if side > MAX_OCTREE_RES:
        raise ResolutionOverflow(
            f"padded resolution {side} exceeds {MAX_OCTREE_RES} cells per axis")
    depth = side.bit_length() - 1

    sigma = np.zeros((side, side, side), dtype=np.float32)
    sigma[:nx, :ny, :nz] = volume.sigma
    sh = np.zeros((side, side, side, 27), dtype=np.float32)
    sh[:nx, :ny, :nz] = volume.sh_flat()

    # per-level max pyramid so subtree emptiness tests are O(1)
    pyramid = [sigma]
    while pyramid[-1].shape[0] > 1:
        p = pyramid[-1]
        m = p.shape[0] // 2
        pyramid.append(p.reshape(m, 2, m, 2, m, 2).max(axis=(1, 3, 5)))
    pyramid.reverse()  # pyramid[k] has 2**k cells per axis

    children_rows: list[np.ndarray] = []
    leaf_sigma: list[np.float32] = []
    leaf_sh: list[np.ndarray] = []

    def build(level: int, x: int, y: int, z: int) -> int:
        if pyramid[level][x, y, z] <= prune_threshold:
            return -1
        if level == depth:
            payload = len(leaf_sigma)
            leaf_sigma.append(sigma[x, y, z])
            leaf_sh.append(sh[x, y, z])
            return -payload - 2
        node = len(children_rows)
        row = np.empty(8, dtype=np.int32)
        children_rows.append(row)
        for c in range(8):
            cx = 2 * x + (c & 1)
            cy = 2 * y + ((c >> 1) & 1)
            cz = 2 * z + ((c >> 2) & 1)
            row[c] = build(level + 1, cx, cy, cz)
        return node

    root = build(0, 0, 0, 0)
    children = (np.stack(children_rows) if children_rows
                else np.empty((0, 8), dtype=np.int32))
    sig = (np.array(leaf_sigma, dtype=np.float32) if leaf_sigma
           else np.empty(0, dtype=np.float32))
    shs = (np.stack(leaf_sh) if leaf_sh else np.empty((0, 27), dtype=np.float32))
    aabb_max = volume.aabb_min + volume.cell_size * side
    return SparseOctree(volume.aabb_min, aabb_max, depth, root, children, sig, shs)
