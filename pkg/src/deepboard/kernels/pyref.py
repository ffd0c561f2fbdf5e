"""Pure NumPy rendering kernels.

Fallback used when the compiled extension is unavailable; implements exactly
the same sampling and compositing arithmetic as ``_render.pyx`` so the two
backends agree to floating-point noise. Rays are marched at a fixed step from
the box entry to the box exit with nearest-cell lookups.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

# real SH basis, degrees 0-2, order (0,0),(1,-1),(1,0),(1,1),(2,-2),(2,-1),(2,0),(2,1),(2,2)
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2_XY = 1.0925484305920792
SH_C2_Z2 = 0.31539156525252005
SH_C2_X2Y2 = 0.5462742152960396


def sh_basis(direction: np.ndarray) -> np.ndarray:
    """9 real SH basis values at unit direction(s); shape (..., 9)."""
    d = np.asarray(direction, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (9,), dtype=np.float64)
    out[..., 0] = SH_C0
    out[..., 1] = SH_C1 * y
    out[..., 2] = SH_C1 * z
    out[..., 3] = SH_C1 * x
    out[..., 4] = SH_C2_XY * x * y
    out[..., 5] = SH_C2_XY * y * z
    out[..., 6] = SH_C2_Z2 * (3.0 * z * z - 1.0)
    out[..., 7] = SH_C2_XY * x * z
    out[..., 8] = SH_C2_X2Y2 * (x * x - y * y)
    return out


def _ray_box(o, d, bmin, bmax):
    """Entry/exit distances of a ray against an axis-aligned box, or None."""
    tmin, tmax = -math.inf, math.inf
    for ax in range(3):
        if d[ax] != 0.0:
            ta = (bmin[ax] - o[ax]) / d[ax]
            tb = (bmax[ax] - o[ax]) / d[ax]
            if ta > tb:
                ta, tb = tb, ta
            tmin = max(tmin, ta)
            tmax = min(tmax, tb)
        elif o[ax] <= bmin[ax] or o[ax] >= bmax[ax]:
            return None
    t0 = max(tmin, 0.0)
    if tmax <= t0:
        return None
    return t0, tmax


def _composite(sigmas, raw_rgb, dt, early_stop, background):
    """Front-to-back emission-absorption over uniform samples, straight alpha."""
    out = np.empty(4, dtype=np.float64)
    if sigmas.size:
        alpha = 1.0 - np.exp(-sigmas * dt)
        t_next = np.cumprod(1.0 - alpha)
        t_prev = np.concatenate(([1.0], t_next[:-1]))
        below = np.nonzero(t_next < early_stop)[0]
        stop = int(below[0]) if below.size else sigmas.size - 1
        weights = (t_prev * alpha)[: stop + 1]
        colors = 1.0 / (1.0 + np.exp(-raw_rgb[: stop + 1]))
        premul = weights @ colors
        transmittance = float(t_next[stop])
    else:
        premul = np.zeros(3)
        transmittance = 1.0
    a = 1.0 - transmittance
    rgb = premul / a if a > 0.0 else np.zeros(3)
    out_a = a + background[3] * (1.0 - a)
    if out_a > 0.0:
        out[:3] = (rgb * a + background[:3] * background[3] * (1.0 - a)) / out_a
    else:
        out[:3] = 0.0
    out[3] = out_a
    return out


def _sample_grid(t0, t1, step):
    length = t1 - t0
    n = max(1, int(math.ceil(length / step)))
    dt = length / n
    ts = t0 + (np.arange(n) + 0.5) * dt
    return ts, dt


def render_rays_dense(origins, dirs, aabb_min, aabb_max, sigma, sh,
                      step, early_stop, background):
    """Render N rays against a dense grid.

    sigma: (nx,ny,nz) float32; sh: (nx,ny,nz,27) float32, channel-major
    (3 channels x 9 coefficients). Returns (N,4) float32 straight-alpha RGBA.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    res = np.array(sigma.shape)
    cell = (aabb_max - aabb_min) / res
    n_rays = origins.shape[0]
    out = np.empty((n_rays, 4), dtype=np.float32)
    bg = _composite(np.empty(0), np.empty((0, 3)), 1.0, early_stop, background)
    for i in range(n_rays):
        o, d = origins[i], dirs[i]
        hit = _ray_box(o, d, aabb_min, aabb_max)
        if hit is None:
            out[i] = bg
            continue
        ts, dt = _sample_grid(hit[0], hit[1], step)
        pts = o[None, :] + ts[:, None] * d[None, :]
        idx = np.clip(((pts - aabb_min) / cell).astype(np.int64), 0, res - 1)
        s = sigma[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64)
        coeffs = sh[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64)
        raw = coeffs.reshape(-1, 3, 9) @ sh_basis(d)
        out[i] = _composite(s, raw, dt, early_stop, background)
    return out


def _octree_lookup(pts, aabb_min, aabb_max, max_depth, root, children):
    """Leaf code for each point; vectorized bitwise descent."""
    n = 1 << max_depth
    cell = (aabb_max - aabb_min) / n
    cells = np.clip(np.floor((pts - aabb_min) / cell).astype(np.int64), 0, n - 1)
    node = np.full(pts.shape[0], root, dtype=np.int64)
    for level in range(max_depth):
        active = node >= 0
        if not active.any():
            break
        shift = max_depth - 1 - level
        ci = (((cells[:, 2] >> shift) & 1) << 2) \
            | (((cells[:, 1] >> shift) & 1) << 1) \
            | ((cells[:, 0] >> shift) & 1)
        node[active] = children[node[active], ci[active]]
    return node


def render_rays_octree(origins, dirs, aabb_min, aabb_max, max_depth, root,
                       children, leaf_sigma, leaf_sh, step, early_stop, background):
    """Render N rays against a sparse octree (same sampling grid as dense).

    Empty leaves contribute zero density, so evaluating them sample-by-sample
    here is numerically identical to the compiled kernel's analytic skipping.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    n_rays = origins.shape[0]
    out = np.empty((n_rays, 4), dtype=np.float32)
    bg = _composite(np.empty(0), np.empty((0, 3)), 1.0, early_stop, background)
    for i in range(n_rays):
        o, d = origins[i], dirs[i]
        hit = _ray_box(o, d, aabb_min, aabb_max)
        if hit is None:
            out[i] = bg
            continue
        ts, dt = _sample_grid(hit[0], hit[1], step)
        pts = o[None, :] + ts[:, None] * d[None, :]
        codes = _octree_lookup(pts, aabb_min, aabb_max, max_depth, root, children)
        occupied = codes <= -2
        payload = np.where(occupied, -codes - 2, 0)
        s = np.where(occupied, leaf_sigma[payload].astype(np.float64), 0.0)
        coeffs = leaf_sh[payload].astype(np.float64)
        coeffs[~occupied] = 0.0
        raw = coeffs.reshape(-1, 3, 9) @ sh_basis(d)
        out[i] = _composite(s, raw, dt, early_stop, background)
    return out
