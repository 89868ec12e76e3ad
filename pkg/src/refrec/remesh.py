"""Incremental isotropic remeshing: long-edge split, short-edge collapse,
valence-equalizing flips, tangential relaxation, and projection back onto
the input surface."""

from dataclasses import dataclass

import numpy as np

from . import geom
from .accel import Bvh
from .mesh import TriMesh, mesh_stats

_AREA_EPS_FACTOR = 1e-12


class RemeshFailed(Exception):
    pass


@dataclass
class RemeshParams:
    target_len: float
    projection_bound: float
    max_iterations: int = 5

    def __post_init__(self):
        if self.target_len <= 0 or self.projection_bound <= 0:
            raise ValueError("target_len and projection_bound must be positive")


class _EditMesh:
    """Mutable triangle mesh for local operations. Faces are tombstoned on
    deletion; vertex->face incidence sets are kept current so the faces on
    an edge (a, b) are vf[a] & vf[b]."""

    def __init__(self, vertices, triangles):
        self.verts = [np.array(p, dtype=np.float64) for p in vertices]
        self.faces = [tuple(int(i) for i in t) for t in triangles]
        self.vf = [set() for _ in self.verts]
        for fid, f in enumerate(self.faces):
            for v in f:
                self.vf[v].add(fid)

    def edge_faces(self, a, b):
        return self.vf[a] & self.vf[b]

    def neighbors(self, v):
        nb = set()
        for fid in self.vf[v]:
            nb.update(self.faces[fid])
        nb.discard(v)
        return nb

    def add_vertex(self, p):
        self.verts.append(np.array(p, dtype=np.float64))
        self.vf.append(set())
        return len(self.verts) - 1

    def add_face(self, a, b, c):
        fid = len(self.faces)
        self.faces.append((a, b, c))
        for v in (a, b, c):
            self.vf[v].add(fid)
        return fid

    def remove_face(self, fid):
        for v in self.faces[fid]:
            self.vf[v].discard(fid)
        self.faces[fid] = None

    def face_normal_area(self, f):
        a, b, c = (self.verts[i] for i in f)
        n = np.cross(b - a, c - a)
        ln = np.linalg.norm(n)
        return (n / ln if ln > 0 else n), 0.5 * ln

    def live_edges(self):
        """All undirected edges of live faces, unique."""
        seen = set()
        for f in self.faces:
            if f is None:
                continue
            for i in range(3):
                a, b = f[i], f[(i + 1) % 3]
                seen.add((a, b) if a < b else (b, a))
        return seen

    def compact(self):
        """Return (vertices, triangles) numpy arrays, dropping tombstones
        and unreferenced vertices."""
        live = [f for f in self.faces if f is not None]
        used = sorted({v for f in live for v in f})
        remap = {v: i for i, v in enumerate(used)}
        verts = np.array([self.verts[v] for v in used])
        tris = np.array([[remap[v] for v in f] for f in live], dtype=np.int64)
        return verts, tris

    # -- local operations ---------------------------------------------------

    def split_edge(self, a, b):
        """Insert the midpoint of edge (a, b), splitting both incident
        faces. Returns the new vertex id or None when not applicable."""
        fs = self.edge_faces(a, b)
        if len(fs) != 2:
            return None
        m = self.add_vertex(0.5 * (self.verts[a] + self.verts[b]))
        for fid in list(fs):
            f = self.faces[fid]
            # Rotate so the split edge is (x, y) in this face's winding.
            x = y = z = -1
            for i in range(3):
                if {f[i], f[(i + 1) % 3]} == {a, b}:
                    x, y, z = f[i], f[(i + 1) % 3], f[(i + 2) % 3]
                    break
            self.remove_face(fid)
            self.add_face(x, m, z)
            self.add_face(m, y, z)
        return m

    def collapse_edge(self, a, b, max_len, area_eps, bvh=None, bound=None):
        """Collapse edge (a, b) to its midpoint (kept in vertex a). Returns
        True on success; rejects collapses that would break the link
        condition, flip a normal, create a degenerate face, create an edge
        longer than max_len, or move the surface farther than `bound` from
        the reference surface in `bvh`."""
        fs = self.edge_faces(a, b)
        if len(fs) != 2:
            return False
        if len(self.neighbors(a) & self.neighbors(b)) != 2:
            return False
        mid = 0.5 * (self.verts[a] + self.verts[b])
        moved = (self.vf[a] | self.vf[b]) - fs
        # Validate every surviving face around either endpoint.
        probes = [mid]
        for fid in moved:
            f = self.faces[fid]
            old = [self.verts[v] for v in f]
            new = [mid if v in (a, b) else self.verts[v] for v in f]
            n_old = np.cross(old[1] - old[0], old[2] - old[0])
            n_new = np.cross(new[1] - new[0], new[2] - new[0])
            area_new = 0.5 * np.linalg.norm(n_new)
            if area_new <= area_eps or np.dot(n_old, n_new) <= 0.0:
                return False
            for v, p in zip(f, new):
                if v not in (a, b) and np.linalg.norm(p - mid) > max_len:
                    return False
            probes.append((new[0] + new[1] + new[2]) / 3.0)
            for i in range(3):
                probes.append(0.5 * (new[i] + new[(i + 1) % 3]))
        if bvh is not None:
            _, dist, _ = bvh.closest_points(np.array(probes))
            if dist.max() > bound:
                return False
        for fid in list(fs):
            self.remove_face(fid)
        self.verts[a] = mid
        for fid in list(self.vf[b]):
            f = self.faces[fid]
            self.remove_face(fid)
            self.add_face(*[a if v == b else v for v in f])
        return True

    def flip_edge(self, a, b):
        """Flip edge (a, b) to the opposite vertices. Returns True on
        success."""
        fs = self.edge_faces(a, b)
        if len(fs) != 2:
            return False
        f1, f2 = fs
        t1 = self.faces[f1]
        t2 = self.faces[f2]
        c = next(v for v in t1 if v not in (a, b))
        d = next(v for v in t2 if v not in (a, b))
        if c == d or d in self.neighbors(c):
            return False
        # Orient so t1 = (a, b, c) cyclically.
        i = t1.index(a)
        if t1[(i + 1) % 3] != b:
            a, b = b, a
        n1, ar1 = self.face_normal_area(t1)
        new1 = (a, d, c)
        new2 = (d, b, c)
        for tri in (new1, new2):
            pts = [self.verts[v] for v in tri]
            n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            if np.linalg.norm(n) < 1e-16 or np.dot(n, n1) <= 0.0:
                return False
        self.remove_face(f1)
        self.remove_face(f2)
        self.add_face(*new1)
        self.add_face(*new2)
        return True


def _split_pass(em, high):
    edges = [(np.linalg.norm(em.verts[a] - em.verts[b]), a, b)
             for a, b in em.live_edges()]
    edges.sort(reverse=True)
    for ln, a, b in edges:
        if ln <= high:
            break
        # Re-check; earlier splits may have retired this edge.
        if len(em.edge_faces(a, b)) == 2:
            cur = np.linalg.norm(em.verts[a] - em.verts[b])
            if cur > high:
                em.split_edge(a, b)


def _collapse_pass(em, low, high, area_eps, bvh=None, bound=None):
    edges = [(np.linalg.norm(em.verts[a] - em.verts[b]), a, b)
             for a, b in em.live_edges()]
    edges.sort()
    touched = set()
    for ln, a, b in edges:
        if ln >= low:
            break
        if a in touched or b in touched:
            continue
        if len(em.edge_faces(a, b)) != 2:
            continue
        if np.linalg.norm(em.verts[a] - em.verts[b]) >= low:
            continue
        if em.collapse_edge(a, b, high, area_eps, bvh, bound):
            touched.add(a)
            touched.add(b)


def _valence_excess(em, vids):
    return sum((len(em.neighbors(v)) - 6) ** 2 for v in vids)


def _flip_pass(em):
    for a, b in list(em.live_edges()):
        fs = em.edge_faces(a, b)
        if len(fs) != 2:
            continue
        f1, f2 = fs
        opp = [v for fid in fs for v in em.faces[fid] if v not in (a, b)]
        if len(opp) != 2:
            continue
        c, d = opp
        before = _valence_excess(em, (a, b, c, d))
        # Valences after flipping: a, b lose one edge; c, d gain one.
        after = ((len(em.neighbors(a)) - 7) ** 2
                 + (len(em.neighbors(b)) - 7) ** 2
                 + (len(em.neighbors(c)) - 5) ** 2
                 + (len(em.neighbors(d)) - 5) ** 2)
        if after < before:
            em.flip_edge(a, b)


def _tangential_smooth_and_project(verts, tris, orig_bvh, relax=0.5):
    m = TriMesh(verts, tris)
    vn = m.vertex_normals()
    centroid = np.zeros_like(verts)
    degree = np.zeros(len(verts))
    e = m.edges
    np.add.at(centroid, e[:, 0], verts[e[:, 1]])
    np.add.at(centroid, e[:, 1], verts[e[:, 0]])
    np.add.at(degree, e[:, 0], 1.0)
    np.add.at(degree, e[:, 1], 1.0)
    centroid /= np.maximum(degree, 1.0)[:, None]
    delta = centroid - verts
    delta -= np.einsum("ij,ij->i", delta, vn)[:, None] * vn
    moved = verts + relax * delta
    projected, _, _ = orig_bvh.closest_points(moved)
    return projected


def remesh(mesh, params):
    """Isotropically remesh a closed manifold mesh toward the target edge
    length; the result stays within params.projection_bound of the input
    surface."""
    mesh.validate()
    stats = mesh_stats(mesh)
    area_eps = _AREA_EPS_FACTOR * stats["diaglen"] ** 2
    orig_bvh = Bvh(mesh)
    t = params.target_len
    high = 4.0 / 3.0 * t
    low = 4.0 / 5.0 * t
    verts, tris = mesh.vertices, mesh.triangles
    for _ in range(params.max_iterations):
        em = _EditMesh(verts, tris)
        _split_pass(em, high)
        # Collapses are checked against a slightly tightened bound so the
        # later tangential relaxation cannot push the surface past it.
        _collapse_pass(em, low, high, area_eps, orig_bvh,
                       0.8 * params.projection_bound)
        _flip_pass(em)
        verts, tris = em.compact()
        verts = _tangential_smooth_and_project(verts, tris, orig_bvh)
    out = TriMesh(verts, tris)
    try:
        out.validate()
    except Exception as exc:
        raise RemeshFailed(str(exc)) from exc
    return out
