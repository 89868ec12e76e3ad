"""Core 3D geometry: rays, pinhole cameras, the background monitor plane,
Snell refraction, and ternary silhouette masks.

All positions and directions are float64 numpy arrays of shape (3,) (or
(n, 3) for the batched variants). Every function here is pure.
"""

from dataclasses import dataclass, field

import numpy as np


class TotalInternalReflection(Exception):
    """Raised when no refracted ray exists for the given incidence."""


class BehindCamera(Exception):
    """Raised when projecting a point with non-positive camera depth."""


def normalize(v):
    """Return v scaled to unit length."""
    n = np.linalg.norm(v, axis=-1, keepdims=v.ndim > 1)
    return v / n


def refract(d, n, eta):
    """Refract unit direction d at a surface with unit normal n.

    n must oppose the incident ray (d . n < 0); eta is the ratio of the
    refractive index on the incident side to the index on the far side.
    Raises TotalInternalReflection when the incidence angle exceeds the
    critical angle.
    """
    c1 = -float(np.dot(d, n))
    disc = 1.0 - eta * eta * (1.0 - c1 * c1)
    if disc < 0.0:
        raise TotalInternalReflection
    return eta * d + (eta * c1 - np.sqrt(disc)) * n


def refract_batch(d, n, eta):
    """Vectorized refract. Returns (directions, ok) where ok is False for
    rays undergoing total internal reflection (their direction is NaN)."""
    c1 = -np.einsum("ij,ij->i", d, n)
    disc = 1.0 - eta * eta * (1.0 - c1 * c1)
    ok = disc >= 0.0
    g = np.sqrt(np.where(ok, disc, 0.0))
    t = eta * d + (eta * c1 - g)[:, None] * n
    t[~ok] = np.nan
    return t, ok


@dataclass
class Camera:
    """Pinhole camera. World-to-camera: x_cam = rotation @ p + translation;
    pixel = (fx * x/z + cx, fy * y/z + cy). Image y grows downward."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-10:
            raise ValueError("camera rotation is not orthonormal")

    @property
    def center(self):
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "width": self.width, "height": self.height,
        }

    @staticmethod
    def from_dict(d):
        return Camera(d["fx"], d["fy"], d["cx"], d["cy"],
                      np.array(d["rotation"]), np.array(d["translation"]),
                      d["width"], d["height"])


def look_at_camera(position, target, up, fx, fy, cx, cy, width, height):
    """Camera at `position` whose optical axis points at `target`."""
    position = np.asarray(position, dtype=np.float64)
    fwd = normalize(np.asarray(target, dtype=np.float64) - position)
    right = normalize(np.cross(fwd, np.asarray(up, dtype=np.float64)))
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return Camera(fx, fy, cx, cy, rot, -rot @ position, width, height)


def project(cam, p):
    """Project world point p to continuous pixel coordinates (x, y)."""
    q = cam.rotation @ p + cam.translation
    if q[2] <= 0.0:
        raise BehindCamera
    return (cam.fx * q[0] / q[2] + cam.cx, cam.fy * q[1] / q[2] + cam.cy)


def project_batch(cam, pts):
    """Project (n, 3) points. Returns ((n, 2) pixels, (n,) depths); pixels
    are NaN where the depth is non-positive."""
    q = pts @ cam.rotation.T + cam.translation
    z = q[:, 2]
    valid = z > 0.0
    zz = np.where(valid, z, 1.0)
    px = np.stack([cam.fx * q[:, 0] / zz + cam.cx,
                   cam.fy * q[:, 1] / zz + cam.cy], axis=1)
    px[~valid] = np.nan
    return px, z


def projection_jacobian_batch(cam, pts):
    """d(pixel)/d(world point) for each point, shape (n, 2, 3)."""
    q = pts @ cam.rotation.T + cam.translation
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    n = len(pts)
    jc = np.zeros((n, 2, 3))
    jc[:, 0, 0] = cam.fx / z
    jc[:, 0, 2] = -cam.fx * x / z ** 2
    jc[:, 1, 1] = cam.fy / z
    jc[:, 1, 2] = -cam.fy * y / z ** 2
    return jc @ cam.rotation


def ray_through_pixel(cam, px):
    """Ray from the camera center through pixel px. Returns (origin, dir)."""
    o, d = rays_through_pixels(cam, np.asarray([px], dtype=np.float64))
    return o[0], d[0]


def rays_through_pixels(cam, px):
    """Rays through (n, 2) pixel coordinates. Returns ((n,3), (n,3))."""
    px = np.asarray(px, dtype=np.float64)
    d_cam = np.stack([(px[:, 0] - cam.cx) / cam.fx,
                      (px[:, 1] - cam.cy) / cam.fy,
                      np.ones(len(px))], axis=1)
    d = normalize(d_cam @ cam.rotation)
    o = np.broadcast_to(cam.center, d.shape).copy()
    return o, d


def pixel_grid(width, height):
    """Pixel-center coordinates of a width x height image in row-major
    order, shape (height*width, 2)."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


@dataclass
class MonitorPlane:
    """Background monitor. A monitor pixel (u, v) sits at
    origin + u * u_axis + v * v_axis; the axes' lengths equal the physical
    pixel pitch and must be orthogonal."""

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    res_u: int
    res_v: int

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.u_axis = np.asarray(self.u_axis, dtype=np.float64)
        self.v_axis = np.asarray(self.v_axis, dtype=np.float64)
        if self.res_u < 1 or self.res_v < 1:
            raise ValueError("monitor resolution must be positive")
        if abs(float(self.u_axis @ self.v_axis)) > 1e-10:
            raise ValueError("monitor axes must be orthogonal")

    @property
    def normal(self):
        return normalize(np.cross(self.u_axis, self.v_axis))

    def point_at(self, u, v):
        return self.origin + u * self.u_axis + v * self.v_axis

    def to_dict(self):
        return {
            "origin": self.origin.tolist(), "u_axis": self.u_axis.tolist(),
            "v_axis": self.v_axis.tolist(),
            "res_u": self.res_u, "res_v": self.res_v,
        }

    @staticmethod
    def from_dict(d):
        return MonitorPlane(np.array(d["origin"]), np.array(d["u_axis"]),
                            np.array(d["v_axis"]), d["res_u"], d["res_v"])


def intersect_monitor(plane, origin, direction):
    """Intersect a ray with the monitor. Returns continuous monitor pixel
    (u, v), or None when the ray is parallel, hits behind the origin, or
    lands outside the active area."""
    uv, ok = intersect_monitor_batch(plane, origin[None, :], direction[None, :])
    return (uv[0, 0], uv[0, 1]) if ok[0] else None


def intersect_monitor_batch(plane, origins, directions):
    """Vectorized monitor intersection. Returns ((n, 2) uv, (n,) ok)."""
    n = len(origins)
    uv = np.full((n, 2), np.nan)
    ok = np.zeros(n, dtype=bool)
    # Solve [u_axis v_axis -dir] (u, v, t) = origin - plane.origin per ray.
    pn = np.cross(plane.u_axis, plane.v_axis)
    denom = directions @ pn
    feasible = np.abs(denom) > 1e-300
    rel = plane.origin - origins
    t = np.where(feasible, (rel @ pn) / np.where(feasible, denom, 1.0), np.nan)
    hit = feasible & (t > 0.0)
    p = origins + t[:, None] * directions - plane.origin
    u = (p @ plane.u_axis) / (plane.u_axis @ plane.u_axis)
    v = (p @ plane.v_axis) / (plane.v_axis @ plane.v_axis)
    inside = hit & (u >= 0.0) & (u < plane.res_u) & (v >= 0.0) & (v < plane.res_v)
    uv[inside, 0] = u[inside]
    uv[inside, 1] = v[inside]
    ok[inside] = True
    return uv, ok


# Ternary mask values.
MASK_INSIDE = 1
MASK_OUTSIDE = -1
MASK_BOUNDARY = 0


@dataclass
class Mask:
    """Per-view ternary silhouette image: +1 inside, -1 outside, 0 boundary."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @staticmethod
    def from_binary(inside):
        """Build a ternary mask from a boolean inside/outside image: pixels
        8-adjacent to the opposite class become Boundary on both sides of
        the contour, so that points on the exact silhouette always round
        into the band."""
        inside = np.asarray(inside, dtype=bool)
        h, w = inside.shape
        padded = np.zeros((h + 2, w + 2), dtype=bool)
        padded[1:-1, 1:-1] = inside
        any_outside = np.zeros((h, w), dtype=bool)
        any_inside = np.zeros((h, w), dtype=bool)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                shifted = padded[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx]
                any_outside |= ~shifted
                any_inside |= shifted
        values = np.where(inside, MASK_INSIDE, MASK_OUTSIDE).astype(np.int8)
        values[(inside & any_outside) | (~inside & any_inside)] = \
            MASK_BOUNDARY
        return Mask(values)

    def chi(self, x, y):
        """Indicator at continuous image coordinates, rounded to the nearest
        pixel; coordinates outside the image count as Outside."""
        xi = int(round(float(x)))
        yi = int(round(float(y)))
        if 0 <= xi < self.width and 0 <= yi < self.height:
            return int(self.values[yi, xi])
        return MASK_OUTSIDE

    def chi_batch(self, pts):
        """Vectorized chi over (n, 2) continuous coordinates."""
        xi = np.rint(pts[:, 0]).astype(np.int64)
        yi = np.rint(pts[:, 1]).astype(np.int64)
        inside_img = (xi >= 0) & (xi < self.width) & (yi >= 0) & (yi < self.height)
        out = np.full(len(pts), MASK_OUTSIDE, dtype=np.int64)
        out[inside_img] = self.values[yi[inside_img], xi[inside_img]]
        return out
