"""Synthetic acquisition: forward refractive path tracing of a ground-truth
mesh into per-view correspondence maps and silhouette masks, plus Gray-code
pattern generation/decoding that mirrors a coded-monitor rig.

The rig geometry: for each view the camera/monitor pair is rotated rigidly
about the world y axis, with the object fixed at the origin. This is the
turntable setup expressed in the object frame."""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .accel import Bvh
from .mesh import TriMesh, mesh_stats

# Pixel outcome tags.
TAG_MISSED_OBJECT = 0     # primary ray never touches the object
TAG_TWO_REFRACTION = 1    # entered and exited exactly once, reached monitor
TAG_MORE_THAN_TWO = 2     # more than two surface interactions
TAG_TIR = 3               # total internal reflection terminated the path
TAG_MISSED_MONITOR = 4    # final ray does not land on the monitor
TAG_INVALID = 5           # matting decode inconsistent

TAG_NAMES = {
    TAG_MISSED_OBJECT: "missed_object",
    TAG_TWO_REFRACTION: "two_refraction",
    TAG_MORE_THAN_TWO: "more_than_two",
    TAG_TIR: "tir",
    TAG_MISSED_MONITOR: "missed_monitor",
    TAG_INVALID: "invalid",
}


class OutOfRange(Exception):
    pass


class DecodeInconsistent(Exception):
    pass


@dataclass
class Scene:
    """Ground-truth mesh plus the per-view acquisition rig."""

    gt_mesh: TriMesh
    eta: float
    cameras: list
    monitors: list
    max_depth: int = 30

    def __post_init__(self):
        if self.eta <= 1.0:
            raise ValueError("refractive index of a solid object must be > 1")
        if len(self.cameras) < 1:
            raise ValueError("at least one view required")
        if len(self.monitors) != len(self.cameras):
            raise ValueError("one monitor pose per view required")

    @property
    def n_views(self):
        return len(self.cameras)


@dataclass
class CorrespondenceMap:
    """Per-pixel observed background point Q (continuous monitor pixels) and
    outcome tag for one view. Q rows are NaN where no point was observed."""

    view: int
    width: int
    height: int
    tags: np.ndarray = field(repr=False)     # (h, w) uint8
    q: np.ndarray = field(repr=False)        # (h, w, 2) float64
    monitor_res: tuple = (0, 0)


def orbit_rig(n_views, cam_distance, monitor_distance, fx, fy, width, height,
              monitor_res, monitor_pitch):
    """Cameras and monitors for `n_views` rig poses evenly rotated about the
    y axis. The camera looks at the origin; the monitor faces it from the
    opposite side, centered on the optical axis."""
    cameras = []
    monitors = []
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    ru, rv = monitor_res
    for u in range(n_views):
        theta = 2.0 * np.pi * u / n_views
        axis = np.array([np.sin(theta), 0.0, np.cos(theta)])
        cam = geom.look_at_camera(cam_distance * axis, [0, 0, 0], [0, 1, 0],
                                  fx, fy, cx, cy, width, height)
        right = cam.rotation[0]
        down = cam.rotation[1]
        center = -monitor_distance * axis
        origin = center - (ru / 2.0) * monitor_pitch * right \
            - (rv / 2.0) * monitor_pitch * down
        monitors.append(geom.MonitorPlane(origin, monitor_pitch * right,
                                          monitor_pitch * down, ru, rv))
        cameras.append(cam)
    return cameras, monitors


def _trace_ray_batch(bvh, normals, eta, monitor, origins, dirs, t_offset,
                     max_depth):
    """Trace rays through the mesh with pure two-sided refraction. Returns
    (tags, Q, refraction_counts)."""
    n = len(origins)
    tags = np.full(n, TAG_MORE_THAN_TWO, dtype=np.uint8)
    q = np.full((n, 2), np.nan)
    counts = np.zeros(n, dtype=np.int64)
    o = origins.copy()
    d = dirs.copy()
    active = np.ones(n, dtype=bool)
    for _ in range(max_depth + 1):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        if bvh is None:
            faces = np.full(len(idx), -1, dtype=np.int64)
            ts = np.full(len(idx), np.inf)
        else:
            faces, ts, _, _ = bvh.first_hit_batch(o[idx], d[idx], t_offset)
        miss = faces < 0
        done = idx[miss]
        if len(done):
            uv, ok = geom.intersect_monitor_batch(monitor, o[done], d[done])
            c = counts[done]
            tag = np.where((c == 0) | (c == 2),
                           np.where(ok,
                                    np.where(c == 0, TAG_MISSED_OBJECT,
                                             TAG_TWO_REFRACTION),
                                    TAG_MISSED_MONITOR),
                           TAG_MORE_THAN_TWO).astype(np.uint8)
            tags[done] = tag
            keep = (tag == TAG_MISSED_OBJECT) | (tag == TAG_TWO_REFRACTION)
            q[done[keep]] = uv[keep]
            active[done] = False
        hit = idx[~miss]
        if len(hit) == 0:
            continue
        f = faces[~miss]
        t = ts[~miss]
        p = o[hit] + t[:, None] * d[hit]
        nrm = normals[f]
        cosi = np.einsum("ij,ij->i", d[hit], nrm)
        entering = cosi < 0.0
        n_use = np.where(entering[:, None], nrm, -nrm)
        eta_rel = np.where(entering, 1.0 / eta, eta)
        # Componentwise refract with per-ray eta.
        c1 = -np.einsum("ij,ij->i", d[hit], n_use)
        disc = 1.0 - eta_rel ** 2 * (1.0 - c1 ** 2)
        ok = disc >= 0.0
        g = np.sqrt(np.where(ok, disc, 0.0))
        newd = eta_rel[:, None] * d[hit] + (eta_rel * c1 - g)[:, None] * n_use
        tir = hit[~ok]
        tags[tir] = TAG_TIR
        active[tir] = False
        cont = hit[ok]
        o[cont] = p[ok]
        d[cont] = newd[ok]
        counts[cont] += 1
    return tags, q, counts


def trace_forward(scene, u, px, bvh=None):
    """Trace the camera ray of one pixel through the ground-truth mesh.
    Returns (tag, Q) where Q is a (u, v) monitor-pixel tuple or None."""
    cam = scene.cameras[u]
    o, d = geom.ray_through_pixel(cam, px)
    tags, q = _trace_view_rays(scene, u, o[None, :], d[None, :], bvh)
    qq = None if np.isnan(q[0, 0]) else (q[0, 0], q[0, 1])
    return int(tags[0]), qq


def _trace_view_rays(scene, u, origins, dirs, bvh=None):
    mesh = scene.gt_mesh
    if mesh is not None and mesh.n_faces > 0:
        if bvh is None:
            bvh = Bvh(mesh)
        normals = mesh.face_normals()
        t_off = 1e-6 * mesh_stats(mesh)["diaglen"]
    else:
        bvh = None
        normals = None
        t_off = 0.0
    tags, q, _ = _trace_ray_batch(bvh, normals, scene.eta, scene.monitors[u],
                                  origins, dirs, t_off, scene.max_depth)
    return tags, q


def simulate_view(scene, u, bvh=None):
    """Simulate the full acquisition of one view. Returns
    (CorrespondenceMap, Mask)."""
    cam = scene.cameras[u]
    w, h = cam.width, cam.height
    px = geom.pixel_grid(w, h)
    o, d = geom.rays_through_pixels(cam, px)
    mesh = scene.gt_mesh
    if mesh is not None and mesh.n_faces > 0:
        if bvh is None:
            bvh = Bvh(mesh)
        faces, _, _, _ = bvh.first_hit_batch(o, d, 0.0)
        inside = (faces >= 0).reshape(h, w)
    else:
        inside = np.zeros((h, w), dtype=bool)
    tags, q = _trace_view_rays(scene, u, o, d, bvh)
    cm = CorrespondenceMap(u, w, h, tags.reshape(h, w),
                           q.reshape(h, w, 2),
                           (scene.monitors[u].res_u, scene.monitors[u].res_v))
    return cm, geom.Mask.from_binary(inside)


# -- Gray codes --------------------------------------------------------------

def encode_gray(index, bits):
    """Binary-reflected Gray code of `index`, most significant bit first."""
    if not 0 <= index < (1 << bits):
        raise OutOfRange(f"index {index} does not fit in {bits} bits")
    g = index ^ (index >> 1)
    return [(g >> (bits - 1 - b)) & 1 for b in range(bits)]

def decode_gray(bit_vector):
    """Inverse of encode_gray (MSB-first bit vector to integer)."""
    n = 0
    acc = 0
    for b in bit_vector:
        acc ^= int(b)
        n = (n << 1) | acc
    return n


def gray_bit_count(resolution):
    return max(1, int(np.ceil(np.log2(resolution))))


@dataclass
class GrayPatternStack:
    """Per-bit binary stripe images for one orientation, at monitor
    resolution. planes[b][cell] is the bit value of stripe cell `cell` in
    pattern image b (MSB first)."""

    orientation: str              # "vertical" (codes columns) or "horizontal"
    bits: int
    planes: np.ndarray = field(repr=False)   # (bits, resolution) uint8

    @staticmethod
    def build(orientation, resolution):
        bits = gray_bit_count(resolution)
        idx = np.arange(resolution)
        g = idx ^ (idx >> 1)
        planes = np.stack([(g >> (bits - 1 - b)) & 1 for b in range(bits)])
        return GrayPatternStack(orientation, bits, planes.astype(np.uint8))


def _decode_planes(planes, observed_bits):
    """Vectorized MSB-first Gray decode of (n, bits) observations."""
    acc = np.zeros(len(observed_bits), dtype=np.int64)
    out = np.zeros(len(observed_bits), dtype=np.int64)
    for b in range(observed_bits.shape[1]):
        acc ^= observed_bits[:, b].astype(np.int64)
        out = (out << 1) | acc
    return out


def matting_pipeline(scene, u, threshold=0.5, bvh=None):
    """Environment-matting emulation: observe all Gray stripe patterns
    through the object, threshold, and decode per-pixel monitor cells.
    Returns a CorrespondenceMap with Q at decoded cell centers."""
    cam = scene.cameras[u]
    mon = scene.monitors[u]
    w, h = cam.width, cam.height
    px = geom.pixel_grid(w, h)
    o, d = geom.rays_through_pixels(cam, px)
    tags, q_exact = _trace_view_rays(scene, u, o, d, bvh)

    has_q = ~np.isnan(q_exact[:, 0])
    cols = np.zeros(len(px), dtype=np.int64)
    rows = np.zeros(len(px), dtype=np.int64)
    cu = np.floor(q_exact[has_q, 0]).astype(np.int64)
    cv = np.floor(q_exact[has_q, 1]).astype(np.int64)
    vert = GrayPatternStack.build("vertical", mon.res_u)
    horz = GrayPatternStack.build("horizontal", mon.res_v)
    # A pixel observes intensity = pattern bit at its background point; the
    # threshold models the binarization step of a real matte.
    obs_u = (vert.planes[:, cu].T.astype(np.float64) > threshold)
    obs_v = (horz.planes[:, cv].T.astype(np.float64) > threshold)
    cols[has_q] = _decode_planes(vert.planes, obs_u)
    rows[has_q] = _decode_planes(horz.planes, obs_v)

    tags = tags.copy()
    q = np.full((len(px), 2), np.nan)
    bad = has_q & ((cols >= mon.res_u) | (rows >= mon.res_v))
    tags[bad] = TAG_INVALID
    good = has_q & ~bad
    q[good, 0] = cols[good] + 0.5
    q[good, 1] = rows[good] + 0.5
    return CorrespondenceMap(u, w, h, tags.reshape(h, w), q.reshape(h, w, 2),
                             (mon.res_u, mon.res_v))


# -- correspondence / mask file formats --------------------------------------

_CORR_MAGIC = b"CORR"
_CORR_VERSION = 1
_CORR_PIXEL_DTYPE = np.dtype([("tag", "u1"), ("q", "<f8", 2)])


def save_corr(path, cm):
    """Write a correspondence map: little-endian header (magic 'CORR',
    version, view, width, height, monitor res) then row-major per-pixel
    records of (tag u8, Q 2 x fp64, NaN when absent)."""
    with open(path, "wb") as fh:
        fh.write(_CORR_MAGIC)
        fh.write(struct.pack("<6I", _CORR_VERSION, cm.view, cm.width,
                             cm.height, cm.monitor_res[0], cm.monitor_res[1]))
        rec = np.zeros(cm.width * cm.height, dtype=_CORR_PIXEL_DTYPE)
        rec["tag"] = cm.tags.ravel()
        rec["q"] = cm.q.reshape(-1, 2)
        fh.write(rec.tobytes())


def load_corr(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _CORR_MAGIC:
            raise ValueError(f"{path}: not a correspondence file")
        version, view, w, h, ru, rv = struct.unpack("<6I", fh.read(24))
        if version != _CORR_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        rec = np.frombuffer(fh.read(w * h * _CORR_PIXEL_DTYPE.itemsize),
                            dtype=_CORR_PIXEL_DTYPE, count=w * h)
    return CorrespondenceMap(view, w, h,
                             rec["tag"].reshape(h, w).copy(),
                             rec["q"].reshape(h, w, 2).copy(), (ru, rv))


def save_mask_pgm(path, mask):
    """Write a ternary mask as binary PGM: 0 outside, 128 boundary,
    255 inside."""
    img = np.zeros((mask.height, mask.width), dtype=np.uint8)
    img[mask.values == geom.MASK_BOUNDARY] = 128
    img[mask.values == geom.MASK_INSIDE] = 255
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_mask_pgm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(x) for x in line.split())
        fh.readline()  # maxval
        img = np.frombuffer(fh.read(w * h), dtype=np.uint8,
                            count=w * h).reshape(h, w)
    values = np.full((h, w), geom.MASK_OUTSIDE, dtype=np.int8)
    values[img == 128] = geom.MASK_BOUNDARY
    values[img == 255] = geom.MASK_INSIDE
    return geom.Mask(values)
