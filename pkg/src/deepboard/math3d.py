"""Poses, cameras, rays and billboard framing.

Conventions used throughout the project:

* right-handed coordinates, Y up, world units are meters
* quaternions stored (w, x, y, z), rotating body frame into world frame
* cameras look along their local -Z axis, +Y up, +X right
* images are row-major with row 0 at the top
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WORLD_UP = np.array([0.0, 1.0, 0.0])
POLE_FALLBACK_UP = np.array([0.0, 0.0, -1.0])


class DegenerateObserver(ValueError):
    """Observer coincides with the billboard center."""


class BehindBillboard(ValueError):
    """Observer is on the back side of the billboard."""


class AspectMismatch(ValueError):
    """Pixel aspect ratio does not match the quad aspect ratio."""


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {a.shape}")
    return a


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero vector")
    return v / n


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([w, -x, -y, -z])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by unit quaternion q (body -> world)."""
    w, x, y, z = q
    u = np.array([x, y, z])
    v = np.asarray(v, dtype=np.float64)
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion for a proper rotation matrix (columns = body axes in world)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + m[i, i] - m[j, j] - m[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return quat_normalize(q)


def quat_slerp(a, b, t: float) -> np.ndarray:
    a = quat_normalize(a)
    b = quat_normalize(b)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 1.0 - 1e-10:
        return quat_normalize(a + t * (b - a))
    theta = math.acos(min(d, 1.0))
    return (math.sin((1 - t) * theta) * a + math.sin(t * theta) * b) / math.sin(theta)


def quat_axis_angle(axis, angle: float) -> np.ndarray:
    axis = normalize(_as_vec3(axis))
    h = 0.5 * angle
    return np.concatenate([[math.cos(h)], math.sin(h) * axis])


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # (w, x, y, z)

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec3(self.position))
        q = np.asarray(self.orientation, dtype=np.float64)
        if q.shape != (4,):
            raise ValueError("orientation must be a 4-vector quaternion")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("orientation quaternion must be unit length")
        object.__setattr__(self, "orientation", q)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def forward(self) -> np.ndarray:
        return quat_rotate(self.orientation, [0.0, 0.0, -1.0])

    def up(self) -> np.ndarray:
        return quat_rotate(self.orientation, [0.0, 1.0, 0.0])


@dataclass(frozen=True)
class Camera:
    pose: Pose
    fov_y: float  # radians, strictly inside (0, pi)
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if not (0.0 < self.fov_y < math.pi):
            raise ValueError("fov_y must lie strictly inside (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1 pixel")
        if not (0.0 < self.near < self.far):
            raise ValueError("require 0 < near < far")

    @property
    def aspect(self) -> float:
        return self.width / self.height


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", _as_vec3(self.origin))
        d = _as_vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class BillboardQuad:
    center: np.ndarray
    half_width: float
    half_height: float
    normal: np.ndarray
    up: np.ndarray
    right: np.ndarray = field(default=None)  # derived if omitted

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center))
        if self.half_width <= 0 or self.half_height <= 0:
            raise ValueError("quad half extents must be positive")
        n = normalize(_as_vec3(self.normal))
        u = normalize(_as_vec3(self.up))
        r = np.cross(u, n) if self.right is None else _as_vec3(self.right)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "up", u)
        object.__setattr__(self, "right", r)
        f = np.stack([self.right, self.up, self.normal])
        if np.max(np.abs(f @ f.T - np.eye(3))) > 1e-5:
            raise ValueError("quad frame must be orthonormal")

    def corners(self) -> np.ndarray:
        """4x3 array: top-left, top-right, bottom-right, bottom-left."""
        c, r, u = self.center, self.right * self.half_width, self.up * self.half_height
        return np.stack([c - r + u, c + r + u, c + r - u, c - r - u])


# ---------------------------------------------------------------------------
# operations

def billboard_orientation(observer_pos, center, world_up=WORLD_UP):
    """Frame of a quad at `center` that faces `observer_pos` head-on.

    Returns (normal, up, right). The normal points at the observer; roll is
    stabilized against `world_up`, falling back to (0, 0, -1) when the
    observer is (nearly) along the world-up axis.
    """
    observer_pos = _as_vec3(observer_pos)
    center = _as_vec3(center)
    world_up = _as_vec3(world_up)
    delta = observer_pos - center
    if np.linalg.norm(delta) < 1e-9:
        raise DegenerateObserver("observer coincides with billboard center")
    n = normalize(delta)
    ref = world_up
    if abs(float(np.dot(ref, n))) > 1.0 - 1e-6:
        ref = POLE_FALLBACK_UP
    u = normalize(ref - float(np.dot(ref, n)) * n)
    r = np.cross(u, n)
    return n, u, r


def billboard_camera(observer_pos, quad: BillboardQuad, width: int, height: int) -> Camera:
    """Camera at the observer whose frustum exactly frames the quad.

    Rendering through this camera and pasting the image back onto the quad
    reproduces the direct view of the object from the observer, up to one
    resampling step.
    """
    observer_pos = _as_vec3(observer_pos)
    delta = observer_pos - quad.center
    d = float(np.linalg.norm(delta))
    if float(np.dot(quad.normal, delta)) <= 0.0:
        raise BehindBillboard("observer is behind the billboard")
    quad_aspect = quad.half_width / quad.half_height
    pixel_aspect = width / height
    if abs(pixel_aspect / quad_aspect - 1.0) > 0.01:
        raise AspectMismatch(
            f"pixel aspect {pixel_aspect:.4f} deviates from quad aspect {quad_aspect:.4f}")
    fov_y = 2.0 * math.atan(quad.half_height / d)
    # camera axes: z toward observer (looks along -z at the quad), y = quad up
    z = normalize(delta)
    y = quad.up
    x = np.cross(y, z)
    rot = np.stack([x, y, z], axis=1)
    pose = Pose(observer_pos, quat_from_matrix(rot))
    return Camera(pose, fov_y, width, height)


def generate_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel rays through pixel centers.

    Returns (origins, directions), each of shape (height, width, 3); row 0 is
    the top image row, directions are unit length.
    """
    h, w = camera.height, camera.width
    tan_y = math.tan(0.5 * camera.fov_y)
    tan_x = tan_y * camera.aspect
    u = (np.arange(w) + 0.5) / w       # 0..1 left -> right
    v = (np.arange(h) + 0.5) / h       # 0..1 top -> bottom
    xs = (2.0 * u - 1.0) * tan_x
    ys = (1.0 - 2.0 * v) * tan_y
    dirs_cam = np.empty((h, w, 3))
    dirs_cam[..., 0] = xs[None, :]
    dirs_cam[..., 1] = ys[:, None]
    dirs_cam[..., 2] = -1.0
    rot = camera.pose.rotation_matrix()
    dirs = dirs_cam @ rot.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.pose.position, (h, w, 3)).copy()
    return origins, dirs


def ray_at(camera: Camera, ix: int, iy: int) -> Ray:
    """Single ray through pixel center (column ix, row iy)."""
    origins, dirs = generate_rays(camera)
    return Ray(origins[iy, ix], dirs[iy, ix])
