"""Differentiable two-refraction path tracing.

Face assignment (which triangles a camera ray pierces) is found by discrete
BVH tracing; the background hit Q' and its gradients are then evaluated on a
smooth fixed-topology composition in which each pierced face is an infinite
plane through its current vertices:

    ray -> plane(f1) -> refract -> plane(f2) -> refract -> monitor

The Jacobians of Q' with respect to the six face vertices are exact
derivatives of that composition, assembled by the chain rule; central finite
differences over the same composition are the test oracle."""

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .capture import TAG_TWO_REFRACTION
from .mesh import mesh_stats


class PathBroken(Exception):
    """The frozen-topology path is no longer geometrically valid."""


@dataclass
class PathBatch:
    """Accepted two-refraction paths of one view, stored as parallel
    arrays. `jac[s, k]` is the 2x3 Jacobian of Q' w.r.t. vertex k of sample
    s, where k = 0..2 are the entry-face vertices and 3..5 the exit-face
    vertices."""

    view: int
    pixels: np.ndarray = field(repr=False)      # (s, 2)
    origins: np.ndarray = field(repr=False)     # (s, 3)
    dirs: np.ndarray = field(repr=False)        # (s, 3)
    f1: np.ndarray = field(repr=False)          # (s,)
    f2: np.ndarray = field(repr=False)          # (s,)
    sign1: np.ndarray = field(repr=False)       # (s,) frozen normal signs
    sign2: np.ndarray = field(repr=False)
    bary1: np.ndarray = field(repr=False)       # (s, 3)
    bary2: np.ndarray = field(repr=False)
    p1: np.ndarray = field(repr=False)          # (s, 3) entry points
    p2: np.ndarray = field(repr=False)          # (s, 3) exit points
    q: np.ndarray = field(repr=False)           # (s, 2) observed Q
    qprime: np.ndarray = field(repr=False)      # (s, 2) simulated Q'
    jac: np.ndarray = field(default=None, repr=False)  # (s, 6, 2, 3)

    @property
    def size(self):
        return len(self.f1)


def _face_normal_jac(tri, with_grad):
    """Unit normals of (s, 3, 3) vertex triples, and optionally the
    Jacobians d(normal)/d(vertex k): (s, 3, 3, 3) indexed [s, k, i, j]."""
    m = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    ln = np.linalg.norm(m, axis=1)
    nu = m / ln[:, None]
    if not with_grad:
        return nu, None
    proj = (np.eye(3) - np.einsum("si,sj->sij", nu, nu)) / ln[:, None, None]
    w = np.stack([tri[:, 2] - tri[:, 1],
                  tri[:, 0] - tri[:, 2],
                  tri[:, 1] - tri[:, 0]], axis=1)
    # (proj @ skew(w_k))[i, j] = proj[i] . (w_k x e_j) = (proj[i] x w_k)[j]
    jn = np.cross(proj[:, None, :, :], w[:, :, None, :])
    return nu, jn


def eval_paths(tri1, tri2, origins, d0, sign1, sign2, eta, monitor,
               with_grad=True):
    """Smooth fixed-topology evaluation of two-refraction paths.

    tri1/tri2: (s, 3, 3) current vertices of the entry/exit faces.
    sign1/sign2: +-1 per sample, the frozen normal orientation making each
    face normal oppose its incident ray.
    Returns (qprime (s, 2), p1, p2, jac (s, 6, 2, 3) or None, valid (s,)).
    Samples where TIR or a monitor miss occurs at these vertices are marked
    invalid (their outputs are unusable); callers drop them."""
    s = len(tri1)
    eta1 = 1.0 / eta
    eta2 = eta
    valid = np.ones(s, dtype=bool)

    nu1, jnu1 = _face_normal_jac(tri1, with_grad)
    n1 = sign1[:, None] * nu1
    r1 = tri1[:, 0] - origins
    sv1 = np.einsum("si,si->s", r1, n1)
    h1 = np.einsum("si,si->s", d0, n1)
    valid &= np.abs(h1) > 1e-300
    h1s = np.where(valid, h1, 1.0)
    t1 = sv1 / h1s
    valid &= t1 > 0
    p1 = origins + t1[:, None] * d0

    c1 = -np.einsum("si,si->s", d0, n1)
    disc1 = 1.0 - eta1 * eta1 * (1.0 - c1 * c1)
    valid &= disc1 > 0
    g1 = np.sqrt(np.where(disc1 > 0, disc1, 1.0))
    d1 = eta1 * d0 + (eta1 * c1 - g1)[:, None] * n1

    nu2, jnu2 = _face_normal_jac(tri2, with_grad)
    n2 = sign2[:, None] * nu2
    r2 = tri2[:, 0] - p1
    sv2 = np.einsum("si,si->s", r2, n2)
    h2 = np.einsum("si,si->s", d1, n2)
    valid &= np.abs(h2) > 1e-300
    h2s = np.where(np.abs(h2) > 1e-300, h2, 1.0)
    t2 = sv2 / h2s
    valid &= t2 > 0
    p2 = p1 + t2[:, None] * d1

    c2 = -np.einsum("si,si->s", d1, n2)
    disc2 = 1.0 - eta2 * eta2 * (1.0 - c2 * c2)
    valid &= disc2 > 0
    g2 = np.sqrt(np.where(disc2 > 0, disc2, 1.0))
    d2 = eta2 * d1 + (eta2 * c2 - g2)[:, None] * n2

    # Monitor: [u_axis  v_axis  -d2] (u, v, t3)^T = p2 - origin.
    mat = np.empty((s, 3, 3))
    mat[:, :, 0] = monitor.u_axis
    mat[:, :, 1] = monitor.v_axis
    mat[:, :, 2] = -d2
    det = np.linalg.det(mat)
    valid &= np.abs(det) > 1e-300
    mat[~valid] = np.eye(3)
    minv = np.linalg.inv(mat)
    x = np.einsum("sij,sj->si", minv, p2 - monitor.origin)
    t3 = x[:, 2]
    valid &= t3 > 0
    qprime = x[:, :2].copy()
    valid &= ((qprime[:, 0] >= 0) & (qprime[:, 0] < monitor.res_u)
              & (qprime[:, 1] >= 0) & (qprime[:, 1] < monitor.res_v))

    if not with_grad:
        return qprime, p1, p2, None, valid

    # Jacobians, slots 0..2 = entry face vertices, 3..5 = exit face.
    jn1 = np.zeros((s, 6, 3, 3))
    jn2 = np.zeros((s, 6, 3, 3))
    jn1[:, :3] = sign1[:, None, None, None] * jnu1
    jn2[:, 3:] = sign2[:, None, None, None] * jnu2

    # Stage 1: p1 and d1 depend on entry vertices only.
    ds = np.einsum("si,skij->skj", r1, jn1)
    ds[:, 0] += n1
    dh = np.einsum("si,skij->skj", d0, jn1)
    dt1 = (h1[:, None, None] * ds - sv1[:, None, None] * dh) \
        / (h1s ** 2)[:, None, None]
    jp1 = np.einsum("si,skj->skij", d0, dt1)
    dc1 = -np.einsum("si,skij->skj", d0, jn1)
    k1 = eta1 - eta1 * eta1 * c1 / g1
    jd1 = np.einsum("si,skj->skij", n1, k1[:, None, None] * dc1) \
        + (eta1 * c1 - g1)[:, None, None, None] * jn1

    # Stage 2: p2 and d2 depend on both faces.
    ds2 = np.einsum("si,skij->skj", r2, jn2) \
        - np.einsum("si,skij->skj", n2, jp1)
    ds2[:, 3] += n2
    dh2 = np.einsum("si,skij->skj", n2, jd1) \
        + np.einsum("si,skij->skj", d1, jn2)
    dt2 = (h2[:, None, None] * ds2 - sv2[:, None, None] * dh2) \
        / (h2s ** 2)[:, None, None]
    jp2 = jp1 + np.einsum("si,skj->skij", d1, dt2) \
        + t2[:, None, None, None] * jd1
    dc2 = -(np.einsum("si,skij->skj", n2, jd1)
            + np.einsum("si,skij->skj", d1, jn2))
    k2 = eta2 - eta2 * eta2 * c2 / g2
    jd2 = eta2 * jd1 \
        + np.einsum("si,skj->skij", n2, k2[:, None, None] * dc2) \
        + (eta2 * c2 - g2)[:, None, None, None] * jn2

    jx = np.einsum("sil,sklj->skij", minv,
                   jp2 + t3[:, None, None, None] * jd2)
    jac = jx[:, :, :2, :]
    return qprime, p1, p2, jac, valid


def find_paths(mesh, bvh, cam, corr, monitor, eta, with_grad=False):
    """Re-trace the camera rays of all pixels tagged two-refraction in the
    observed correspondence map against the current mesh, and keep the
    paths that (a) hit the mesh, (b, d) refract twice without TIR, (c) exit
    through a back face, (f) meet no further geometry, and (e) land on the
    monitor. Rejected pixels are skipped silently."""
    t_off = 1e-6 * mesh_stats(mesh)["diaglen"]
    sel = (corr.tags == TAG_TWO_REFRACTION).ravel()
    px = geom.pixel_grid(corr.width, corr.height)[sel]
    q_obs = corr.q.reshape(-1, 2)[sel]
    origins, dirs = geom.rays_through_pixels(cam, px)
    normals = mesh.face_normals()

    f1, t1, u1, v1 = bvh.first_hit_batch(origins, dirs, t_off)
    keep = f1 >= 0
    # (b) entry refraction must not be TIR and must enter the solid.
    if keep.any():
        cosi = np.einsum("ij,ij->i", dirs, normals[np.maximum(f1, 0)])
        keep &= cosi < 0
        disc = 1.0 - (1.0 / eta) ** 2 * (1.0 - cosi ** 2)
        keep &= disc > 0
    idx = np.nonzero(keep)[0]
    if len(idx) == 0:
        return _empty_batch(corr.view)
    o1 = origins[idx] + t1[idx, None] * dirs[idx]
    d1, _ = geom.refract_batch(dirs[idx], normals[f1[idx]], 1.0 / eta)

    f2, t2, u2, v2 = bvh.first_hit_batch(o1, d1, t_off)
    keep2 = f2 >= 0
    if keep2.any():
        # (c) the interior ray must exit (leave through a back face).
        coso = np.einsum("ij,ij->i", d1, normals[np.maximum(f2, 0)])
        keep2 &= coso > 0
        disc = 1.0 - eta ** 2 * (1.0 - coso ** 2)
        keep2 &= disc > 0
    idx2 = idx[keep2]
    if len(idx2) == 0:
        return _empty_batch(corr.view)
    o2 = o1[keep2] + t2[keep2, None] * d1[keep2]
    d2, _ = geom.refract_batch(d1[keep2], -normals[f2[keep2]], eta)

    # (f) nothing else on the way out.
    f3, _, _, _ = bvh.first_hit_batch(o2, d2, t_off)
    keep3 = f3 < 0
    idx3 = idx2[keep3]
    if len(idx3) == 0:
        return _empty_batch(corr.view)

    face1 = f1[idx3]
    face2 = f2[keep2][keep3]
    tri1 = mesh.vertices[mesh.triangles[face1]]
    tri2 = mesh.vertices[mesh.triangles[face2]]
    sign1 = np.ones(len(idx3))
    sign2 = -np.ones(len(idx3))
    # (e) monitor hit, evaluated on the smooth composition.
    qprime, p1s, p2s, jac, ok = eval_paths(
        tri1, tri2, origins[idx3], dirs[idx3], sign1, sign2, eta, monitor,
        with_grad=with_grad)

    bb1 = np.stack([1 - u1[idx3] - v1[idx3], u1[idx3], v1[idx3]], axis=1)
    bu2 = u2[keep2][keep3]
    bv2 = v2[keep2][keep3]
    bb2 = np.stack([1 - bu2 - bv2, bu2, bv2], axis=1)

    return PathBatch(
        view=corr.view,
        pixels=px[idx3][ok],
        origins=origins[idx3][ok],
        dirs=dirs[idx3][ok],
        f1=face1[ok], f2=face2[ok],
        sign1=sign1[ok], sign2=sign2[ok],
        bary1=bb1[ok], bary2=bb2[ok],
        p1=p1s[ok], p2=p2s[ok],
        q=q_obs[idx3][ok], qprime=qprime[ok],
        jac=None if jac is None else jac[ok],
    )


def _empty_batch(view):
    z = np.zeros
    return PathBatch(view, z((0, 2)), z((0, 3)), z((0, 3)),
                     z(0, dtype=np.int64), z(0, dtype=np.int64),
                     z(0), z(0), z((0, 3)), z((0, 3)), z((0, 3)), z((0, 3)),
                     z((0, 2)), z((0, 2)), z((0, 6, 2, 3)))


def refresh_jacobians(mesh, batch, monitor, eta):
    """Recompute Q' and Jacobians of an existing batch at the current mesh
    vertices (topology frozen). Returns the still-valid sub-batch."""
    tri1 = mesh.vertices[mesh.triangles[batch.f1]]
    tri2 = mesh.vertices[mesh.triangles[batch.f2]]
    qprime, p1, p2, jac, ok = eval_paths(tri1, tri2, batch.origins,
                                         batch.dirs, batch.sign1, batch.sign2,
                                         eta, monitor, with_grad=True)
    return PathBatch(batch.view, batch.pixels[ok], batch.origins[ok],
                     batch.dirs[ok], batch.f1[ok], batch.f2[ok],
                     batch.sign1[ok], batch.sign2[ok], batch.bary1[ok],
                     batch.bary2[ok], p1[ok], p2[ok], batch.q[ok],
                     qprime[ok], jac[ok])
