"""Bounding-volume-hierarchy ray/mesh intersection and closest-point
queries. The hot loops are JIT compiled with numba; the Bvh object itself
is immutable after construction and safe for concurrent queries."""

import numpy as np
from numba import njit, prange

from .mesh import EmptyMesh

_LEAF_SIZE = 4


class Miss(Exception):
    pass


@njit(cache=True)
def _build_nodes(tri_lo, tri_hi, centroids):
    n = tri_lo.shape[0]
    max_nodes = 2 * n + 2
    nmin = np.empty((max_nodes, 3), dtype=np.float64)
    nmax = np.empty((max_nodes, 3), dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    perm = np.arange(n)
    # Explicit stack of (node, lo, hi) ranges over perm.
    stack = np.empty((64 + 2 * n, 3), dtype=np.int64)
    stack[0] = (0, 0, n)
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node, lo, hi = stack[top]
        bmin = np.full(3, np.inf)
        bmax = np.full(3, -np.inf)
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for i in range(lo, hi):
            t = perm[i]
            for a in range(3):
                if tri_lo[t, a] < bmin[a]:
                    bmin[a] = tri_lo[t, a]
                if tri_hi[t, a] > bmax[a]:
                    bmax[a] = tri_hi[t, a]
                if centroids[t, a] < cmin[a]:
                    cmin[a] = centroids[t, a]
                if centroids[t, a] > cmax[a]:
                    cmax[a] = centroids[t, a]
        nmin[node] = bmin
        nmax[node] = bmax
        if hi - lo <= _LEAF_SIZE:
            start[node] = lo
            count[node] = hi - lo
            continue
        ext = cmax - cmin
        axis = 0
        if ext[1] > ext[axis]:
            axis = 1
        if ext[2] > ext[axis]:
            axis = 2
        if ext[axis] <= 0.0:
            # All centroids coincide; make a leaf to avoid infinite splits.
            start[node] = lo
            count[node] = hi - lo
            continue
        seg = perm[lo:hi]
        order = np.argsort(centroids[seg, axis], kind="mergesort")
        perm[lo:hi] = seg[order]
        mid = (lo + hi) // 2
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack[top] = (lc, lo, mid)
        stack[top + 1] = (rc, mid, hi)
        top += 2
    return (nmin[:n_nodes], nmax[:n_nodes], left[:n_nodes], right[:n_nodes],
            start[:n_nodes], count[:n_nodes], perm)


@njit(cache=True, inline="always")
def _tri_hit(v0, e1, e2, o, d, t_min):
    """Moller-Trumbore with inclusive edge tests; returns (t, u, v) or
    t = inf on miss."""
    px = d[1] * e2[2] - d[2] * e2[1]
    py = d[2] * e2[0] - d[0] * e2[2]
    pz = d[0] * e2[1] - d[1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if -1e-300 < det < 1e-300:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    tx = o[0] - v0[0]
    ty = o[1] - v0[1]
    tz = o[2] - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-12 or u > 1.0 + 1e-12:
        return np.inf, 0.0, 0.0
    qx = ty * e1[2] - tz * e1[1]
    qy = tz * e1[0] - tx * e1[2]
    qz = tx * e1[1] - ty * e1[0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return np.inf, 0.0, 0.0
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t <= t_min:
        return np.inf, 0.0, 0.0
    return t, u, v


@njit(cache=True, inline="always")
def _box_t(bmin, bmax, o, inv_d, t_best):
    """Slab test; returns entry t, or inf when the box is missed or farther
    than the current best hit."""
    t0 = 0.0
    t1 = t_best
    for a in range(3):
        ta = (bmin[a] - o[a]) * inv_d[a]
        tb = (bmax[a] - o[a]) * inv_d[a]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return np.inf
    return t0


@njit(cache=True)
def _first_hit(nmin, nmax, left, right, start, count, perm, v0s, e1s, e2s,
               o, d, t_min):
    inv_d = np.empty(3)
    for a in range(3):
        if d[a] != 0.0:
            inv_d[a] = 1.0 / d[a]
        else:
            inv_d[a] = np.inf
    best_t = np.inf
    best_face = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_t(nmin[node], nmax[node], o, inv_d, best_t) == np.inf:
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = perm[i]
                t, u, v = _tri_hit(v0s[f], e1s[f], e2s[f], o, d, t_min)
                if t < best_t:
                    best_t = t
                    best_face = f
                    best_u = u
                    best_v = v
        else:
            lc = left[node]
            rc = right[node]
            tl = _box_t(nmin[lc], nmax[lc], o, inv_d, best_t)
            tr = _box_t(nmin[rc], nmax[rc], o, inv_d, best_t)
            # Push the nearer child last so it is visited first.
            if tl <= tr:
                if tr != np.inf:
                    stack[top] = rc
                    top += 1
                if tl != np.inf:
                    stack[top] = lc
                    top += 1
            else:
                stack[top] = lc
                top += 1
                stack[top] = rc
                top += 1
    return best_face, best_t, best_u, best_v


@njit(cache=True, parallel=True)
def _first_hit_batch(nmin, nmax, left, right, start, count, perm,
                     v0s, e1s, e2s, origins, dirs, t_min):
    n = origins.shape[0]
    faces = np.empty(n, dtype=np.int64)
    ts = np.empty(n, dtype=np.float64)
    us = np.empty(n, dtype=np.float64)
    vs = np.empty(n, dtype=np.float64)
    for i in prange(n):
        f, t, u, v = _first_hit(nmin, nmax, left, right, start, count, perm,
                                v0s, e1s, e2s, origins[i], dirs[i], t_min)
        faces[i] = f
        ts[i] = t
        us[i] = u
        vs[i] = v
    return faces, ts, us, vs


@njit(cache=True, inline="always")
def _closest_on_tri(p, a, b, c):
    """Closest point on triangle abc to p (Ericson, Real-Time Collision
    Detection)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = p - b
    d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        w = d1 / (d1 - d3)
        return a + w * ab
    cp = p - c
    d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
    d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


@njit(cache=True, inline="always")
def _box_dist2(bmin, bmax, p):
    d2 = 0.0
    for a in range(3):
        if p[a] < bmin[a]:
            d2 += (bmin[a] - p[a]) ** 2
        elif p[a] > bmax[a]:
            d2 += (p[a] - bmax[a]) ** 2
    return d2


@njit(cache=True)
def _closest_point(nmin, nmax, left, right, start, count, perm,
                   v0s, v1s, v2s, p):
    best_d2 = np.inf
    best = np.zeros(3)
    best_face = -1
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_dist2(nmin[node], nmax[node], p) >= best_d2:
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                f = perm[i]
                q = _closest_on_tri(p, v0s[f], v1s[f], v2s[f])
                d2 = ((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
                      + (p[2] - q[2]) ** 2)
                if d2 < best_d2:
                    best_d2 = d2
                    best = q
                    best_face = f
        else:
            lc = left[node]
            rc = right[node]
            dl = _box_dist2(nmin[lc], nmax[lc], p)
            dr = _box_dist2(nmin[rc], nmax[rc], p)
            if dl <= dr:
                stack[top] = rc
                stack[top + 1] = lc
            else:
                stack[top] = lc
                stack[top + 1] = rc
            top += 2
    return best, best_d2, best_face


@njit(cache=True, parallel=True)
def _closest_point_batch(nmin, nmax, left, right, start, count, perm,
                         v0s, v1s, v2s, pts):
    n = pts.shape[0]
    out = np.empty((n, 3), dtype=np.float64)
    d2s = np.empty(n, dtype=np.float64)
    faces = np.empty(n, dtype=np.int64)
    for i in prange(n):
        q, d2, f = _closest_point(nmin, nmax, left, right, start, count,
                                  perm, v0s, v1s, v2s, pts[i])
        out[i] = q
        d2s[i] = d2
        faces[i] = f
    return out, d2s, faces


class Bvh:
    """Median-split BVH over a triangle mesh."""

    def __init__(self, mesh):
        if mesh.n_faces == 0:
            raise EmptyMesh
        v = mesh.vertices
        t = mesh.triangles
        p0 = v[t[:, 0]]
        p1 = v[t[:, 1]]
        p2 = v[t[:, 2]]
        self.v0 = np.ascontiguousarray(p0)
        self.v1 = np.ascontiguousarray(p1)
        self.v2 = np.ascontiguousarray(p2)
        self.e1 = np.ascontiguousarray(p1 - p0)
        self.e2 = np.ascontiguousarray(p2 - p0)
        lo = np.minimum(np.minimum(p0, p1), p2)
        hi = np.maximum(np.maximum(p0, p1), p2)
        cen = (p0 + p1 + p2) / 3.0
        (self.nmin, self.nmax, self.left, self.right, self.start,
         self.count, self.perm) = _build_nodes(lo, hi, cen)
        self.n_faces = mesh.n_faces

    def first_hit(self, origin, direction, t_min=0.0):
        """Nearest intersection with parametric distance > t_min. Returns
        (face, t, (b0, b1, b2)) or raises Miss."""
        f, t, u, v = _first_hit(self.nmin, self.nmax, self.left, self.right,
                                self.start, self.count, self.perm,
                                self.v0, self.e1, self.e2,
                                np.ascontiguousarray(origin, dtype=np.float64),
                                np.ascontiguousarray(direction, dtype=np.float64),
                                t_min)
        if f < 0:
            raise Miss
        return int(f), float(t), (1.0 - u - v, u, v)

    def first_hit_batch(self, origins, dirs, t_min=0.0):
        """Vectorized first_hit. Returns (faces, ts, us, vs); faces < 0 and
        ts = inf mark misses. (u, v) are the barycentric weights of the
        second and third triangle vertices."""
        return _first_hit_batch(self.nmin, self.nmax, self.left, self.right,
                                self.start, self.count, self.perm,
                                self.v0, self.e1, self.e2,
                                np.ascontiguousarray(origins, dtype=np.float64),
                                np.ascontiguousarray(dirs, dtype=np.float64),
                                t_min)

    def closest_points(self, pts):
        """Closest surface points to (n, 3) query points. Returns
        (points (n,3), distances (n,), face ids (n,))."""
        q, d2, f = _closest_point_batch(
            self.nmin, self.nmax, self.left, self.right, self.start,
            self.count, self.perm, self.v0, self.v1, self.v2,
            np.ascontiguousarray(pts, dtype=np.float64))
        return q, np.sqrt(d2), f
