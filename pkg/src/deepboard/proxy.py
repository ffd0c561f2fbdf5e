"""Invisible physics stand-in: marching-cubes mesh, collision queries, shadows.

The mesh is extracted from the density grid and never drawn; it only answers
ray casts, sphere contacts and ground shadow projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .math3d import Ray, _as_vec3, normalize
from .volume import DenseVolume

DEGENERATE_AREA = 1e-12


class LightParallelToGround(ValueError):
    """Light direction does not point down toward the ground plane."""


@dataclass(frozen=True)
class ProxyMesh:
    vertices: np.ndarray   # (V, 3) float64, world units
    triangles: np.ndarray  # (F, 3) int32 indices
    normals: np.ndarray    # (F, 3) float64, per-triangle geometric normals

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "normals",
                           np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]


@dataclass(frozen=True)
class ContactReport:
    hit: bool
    t: float = 0.0           # ray distance, or penetration depth for spheres
    point: np.ndarray = None
    normal: np.ndarray = None


_NO_CONTACT = ContactReport(False)


def extract_proxy(volume: DenseVolume, iso: float | None = None) -> ProxyMesh:
    """Marching-cubes isosurface of the density grid at isovalue ``iso``.

    Defaults to half the peak density. An isovalue outside the field's range
    yields an empty mesh. Vertices are linearly interpolated along cell edges
    and positioned at world-space cell centers.
    """
    sigma = volume.sigma.astype(np.float64)
    if iso is None:
        iso = 0.5 * float(sigma.max())
    lo, hi = float(sigma.min()), float(sigma.max())
    if not (lo < iso < hi):
        empty = np.empty((0, 3))
        return ProxyMesh(empty, np.empty((0, 3), dtype=np.int32), empty)
    verts, faces, _, _ = measure.marching_cubes(
        sigma, level=iso, spacing=tuple(volume.cell_size))
    # grid point (i,j,k) sits at the center of cell (i,j,k)
    verts = verts + (volume.aabb_min + 0.5 * volume.cell_size)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    cross = np.cross(b - a, c - a)
    area2 = np.linalg.norm(cross, axis=1)
    keep = area2 * 0.5 >= DEGENERATE_AREA
    faces = faces[keep]
    normals = cross[keep] / area2[keep][:, None]
    return ProxyMesh(verts, faces.astype(np.int32), normals)


def ray_hit(mesh: ProxyMesh, ray: Ray) -> ContactReport:
    """Nearest positive-t ray/triangle intersection (Moller-Trumbore).

    Vectorized over all triangles; ties broken by lowest triangle index.
    """
    if mesh.is_empty:
        return _NO_CONTACT
    a, b, c = mesh.triangle_corners()
    o, d = ray.origin, ray.direction
    e1 = b - a
    e2 = c - a
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    parallel = np.abs(det) < 1e-12
    inv_det = np.where(parallel, 0.0, 1.0 / np.where(parallel, 1.0, det))
    tvec = o - a
    u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)
    v = np.einsum("j,ij->i", d, qvec) * inv_det
    t = np.einsum("ij,ij->i", e2, qvec) * inv_det
    valid = (~parallel) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
    if not valid.any():
        return _NO_CONTACT
    t_masked = np.where(valid, t, np.inf)
    idx = int(np.argmin(t_masked))  # argmin takes the lowest index on ties
    n = mesh.normals[idx]
    return ContactReport(True, float(t[idx]), o + t[idx] * d, n)


def _closest_points_on_triangles(p, a, b, c):
    """Closest point to p on each triangle (a, b, c); vectorized."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    result = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    def settle(mask, pts):
        new = mask & ~done
        result[new] = pts[new] if pts.ndim == 2 else pts
        done[new] = True

    settle((d1 <= 0) & (d2 <= 0), a)                                  # vertex a
    settle((d3 >= 0) & (d4 <= d3), b)                                 # vertex b
    settle((d6 >= 0) & (d5 <= d6), c)                                 # vertex c
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        settle((vc <= 0) & (d1 >= 0) & (d3 <= 0),
               a + ab * np.where(d1 - d3 != 0, d1 / (d1 - d3), 0)[:, None])  # edge ab
        vb = d5 * d2 - d1 * d6
        settle((vb <= 0) & (d2 >= 0) & (d6 <= 0),
               a + ac * np.where(d2 - d6 != 0, d2 / (d2 - d6), 0)[:, None])  # edge ac
        va = d3 * d6 - d5 * d4
        w_edge = np.where((d4 - d3) + (d5 - d6) != 0,
                          (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0)
        settle((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
               b + (c - b) * w_edge[:, None])                          # edge bc
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0)
        w = np.where(denom != 0, vc / denom, 0)
        settle(np.ones(len(a), dtype=bool), a + ab * v[:, None] + ac * w[:, None])
    return result


def sphere_contact(mesh: ProxyMesh, center, radius: float) -> ContactReport:
    """Deepest sphere/mesh penetration via closest point on any triangle."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = _as_vec3(center)
    if mesh.is_empty:
        return _NO_CONTACT
    a, b, c = mesh.triangle_corners()
    closest = _closest_points_on_triangles(center[None, :], a, b, c)
    dists = np.linalg.norm(closest - center, axis=1)
    idx = int(np.argmin(dists))
    dist = float(dists[idx])
    if dist >= radius:
        return _NO_CONTACT
    point = closest[idx]
    delta = center - point
    if np.linalg.norm(delta) > 1e-12:
        n = normalize(delta)
    else:
        n = mesh.normals[idx]
    return ContactReport(True, radius - dist, point, n)


def shadow_mask(mesh: ProxyMesh, light_dir, ground_y: float,
                resolution: int = 128) -> tuple[np.ndarray, tuple]:
    """Binary shadow of the mesh on the plane y = ground_y.

    Vertices are projected along ``light_dir`` and the projected triangles
    rasterized into a resolution x resolution boolean mask. Returns
    (mask, extent) where extent = (x_min, x_max, z_min, z_max) is the world
    rectangle the mask covers; mask[row, col] maps rows to z and cols to x.
    """
    light_dir = normalize(_as_vec3(light_dir))
    if light_dir[1] >= -1e-3:
        raise LightParallelToGround("light_dir must point down toward the ground")
    if mesh.is_empty:
        return np.zeros((resolution, resolution), dtype=bool), (0.0, 0.0, 0.0, 0.0)
    s = (ground_y - mesh.vertices[:, 1]) / light_dir[1]
    proj = mesh.vertices + s[:, None] * light_dir
    px, pz = proj[:, 0], proj[:, 2]
    pad = 1e-6 + 0.01 * max(np.ptp(px), np.ptp(pz), 1e-6)
    x_min, x_max = px.min() - pad, px.max() + pad
    z_min, z_max = pz.min() - pad, pz.max() + pad
    mask = np.zeros((resolution, resolution), dtype=bool)
    sx = resolution / (x_max - x_min)
    sz = resolution / (z_max - z_min)
    tri2d = np.stack([(px[mesh.triangles] - x_min) * sx,
                      (pz[mesh.triangles] - z_min) * sz], axis=-1)  # (F, 3, 2)
    for tri in tri2d:
        area2d = ((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
                  - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0]))
        if abs(area2d) < 1e-12:
            continue  # edge-on triangle, zero footprint
        lo = np.clip(np.floor(tri.min(axis=0)).astype(int), 0, resolution - 1)
        hi = np.clip(np.ceil(tri.max(axis=0)).astype(int), 0, resolution)
        if lo[0] >= hi[0] or lo[1] >= hi[1]:
            continue
        xs = np.arange(lo[0], hi[0]) + 0.5
        zs = np.arange(lo[1], hi[1]) + 0.5
        gx, gz = np.meshgrid(xs, zs, indexing="ij")
        inside = np.ones(gx.shape, dtype=bool)
        for i in range(3):
            ax, az = tri[i]
            bx, bz = tri[(i + 1) % 3]
            cx, cz = tri[(i + 2) % 3]
            edge = (gx - ax) * (bz - az) - (gz - az) * (bx - ax)
            ref = (cx - ax) * (bz - az) - (cz - az) * (bx - ax)
            inside &= edge * ref >= 0
        cols, rows = np.nonzero(inside)
        mask[rows + lo[1], cols + lo[0]] |= True
    return mask, (float(x_min), float(x_max), float(z_min), float(z_max))


def save_obj(mesh: ProxyMesh, path) -> None:
    """Write positions and faces as OBJ text (inspection only)."""
    lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in mesh.vertices]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
