"""Indexed triangle mesh with adjacency, silhouette-edge extraction, OBJ/PLY
I/O, and the coarse-to-fine target edge length schedule."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import geom


class EmptyMesh(Exception):
    pass


class DegenerateFace(Exception):
    pass


class InvalidMesh(Exception):
    pass


class TriMesh:
    """Triangle surface mesh. `vertices` is (n, 3) float64 and `triangles`
    is (m, 3) int64. Adjacency (edges, edge->faces, opposite vertices) is
    derived lazily and cached; it depends on topology only, so vertex
    positions may be updated in place without invalidating it."""

    def __init__(self, vertices, triangles):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise InvalidMesh("vertices must be (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise InvalidMesh("triangles must be (m, 3)")
        self._adjacency = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.triangles)

    def copy(self):
        return TriMesh(self.vertices.copy(), self.triangles.copy())

    # -- adjacency ---------------------------------------------------------

    def _build_adjacency(self):
        tris = self.triangles
        # Directed edges of every face, in winding order.
        de = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        face_of = np.tile(np.arange(len(tris)), 3)
        opp = np.concatenate([tris[:, 2], tris[:, 0], tris[:, 1]])
        lo = np.minimum(de[:, 0], de[:, 1])
        hi = np.maximum(de[:, 0], de[:, 1])
        key = lo * (self.n_vertices + 1) + hi
        order = np.argsort(key, kind="stable")
        key_s = key[order]
        uniq, start, counts = np.unique(key_s, return_index=True,
                                        return_counts=True)
        if counts.max(initial=0) > 2:
            raise InvalidMesh("non-manifold edge (more than two faces)")
        if counts.min(initial=2) < 2:
            raise InvalidMesh("boundary edge (mesh not closed)")
        e0 = order[start]
        e1 = order[start + 1]
        edges = np.stack([lo[e0], hi[e0]], axis=1)
        edge_faces = np.stack([face_of[e0], face_of[e1]], axis=1)
        edge_opp = np.stack([opp[e0], opp[e1]], axis=1)
        # Winding consistency: the two directed copies must run opposite ways.
        if np.any(de[e0, 0] == de[e1, 0]):
            raise InvalidMesh("inconsistent winding")
        self._adjacency = (edges, edge_faces, edge_opp)

    @property
    def edges(self):
        """(e, 2) unique undirected edges, low vertex index first."""
        if self._adjacency is None:
            self._build_adjacency()
        return self._adjacency[0]

    @property
    def edge_faces(self):
        """(e, 2) the two faces incident to each edge."""
        if self._adjacency is None:
            self._build_adjacency()
        return self._adjacency[1]

    @property
    def edge_opposite_vertices(self):
        """(e, 2) the vertex of each incident face opposite to the edge."""
        if self._adjacency is None:
            self._build_adjacency()
        return self._adjacency[2]

    # -- geometry ----------------------------------------------------------

    def face_normals(self, normalized=True):
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        if not normalized:
            return n
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(ln > 0, ln, 1.0)

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(normalized=False), axis=1)

    def vertex_normals(self):
        """Area-weighted vertex normals."""
        fn = self.face_normals(normalized=False)
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.triangles[:, k], fn)
        return geom.normalize(vn)

    def edge_lengths(self):
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]],
                              axis=1)

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges) + self.n_faces

    def signed_volume(self):
        v = self.vertices
        t = self.triangles
        return float(np.einsum("ij,ij->i", v[t[:, 0]],
                               np.cross(v[t[:, 1]], v[t[:, 2]])).sum() / 6.0)

    def validate(self, area_eps_factor=1e-12):
        """Check the manifold/closed/winding/degeneracy invariants; raises
        InvalidMesh or DegenerateFace on violation."""
        if self.n_vertices == 0 or self.n_faces == 0:
            raise EmptyMesh
        self._adjacency = None
        self._build_adjacency()
        diag = mesh_stats(self)["diaglen"]
        if np.any(self.face_areas() <= area_eps_factor * diag * diag):
            raise DegenerateFace("face area below threshold")
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidMesh("non-finite vertex")


def face_normal(mesh, f):
    """Unit normal of face f (right-hand rule on the winding order)."""
    t = mesh.triangles[f]
    v = mesh.vertices
    n = np.cross(v[t[1]] - v[t[0]], v[t[2]] - v[t[0]])
    ln = np.linalg.norm(n)
    if ln < 1e-300:
        raise DegenerateFace(f"face {f} is degenerate")
    return n / ln


def mesh_stats(mesh):
    """Bounding-box diagonal and mean edge length of a mesh."""
    if mesh.n_vertices == 0:
        raise EmptyMesh
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    return {"diaglen": float(np.linalg.norm(hi - lo)),
            "edgelen": float(mesh.edge_lengths().mean())}


def target_length(stage, n_stages, diaglen):
    """Remeshing target edge length for stage `stage` of `n_stages`,
    sampled from inverse-distance space: t = n_stages * t_min / stage with
    t_min = 0.005 * diaglen."""
    if not 1 <= stage <= n_stages:
        raise ValueError("stage out of range")
    t_min = 0.005 * diaglen
    return n_stages * t_min / stage


@dataclass
class SilhouetteEdges:
    """Silhouette edges of one view: mesh edges whose adjacent faces face
    toward and away from the camera. All arrays are parallel over edges."""

    edge_ids: np.ndarray          # (k,) indices into mesh.edges
    endpoints: np.ndarray         # (k, 2) vertex ids
    proj_endpoints: np.ndarray    # (k, 2, 2) projected endpoint pixels
    midpoints_3d: np.ndarray      # (k, 3) 3D edge midpoints
    midpoints: np.ndarray         # (k, 2) projected 3D midpoints (s_b)
    lengths_2d: np.ndarray        # (k,) projected edge lengths (||b||)
    normals_2d: np.ndarray        # (k, 2) outward unit 2D normals (N_b)
    front_faces: np.ndarray       # (k,) the front-facing incident face
    back_faces: np.ndarray        # (k,) the back-facing incident face


def silhouette_edges(mesh, cam, face_normals=None):
    """Extract the silhouette edge set of `mesh` as seen from `cam`.

    An edge qualifies when exactly one of its two incident faces faces the
    camera. Edges with an endpoint behind the camera are dropped with a
    warning. The 2D normal is perpendicular to the projected edge and points
    away from the projected interior of the front-facing triangle.
    `face_normals` lets callers that query several cameras share one normal
    computation."""
    v = mesh.vertices
    fn = mesh.face_normals() if face_normals is None else face_normals
    c = cam.center
    # Front-facing: camera center on the positive side of the face plane.
    facing = np.einsum("ij,ij->i", fn, c - v[mesh.triangles[:, 0]]) > 0.0
    ef = mesh.edge_faces
    sil = facing[ef[:, 0]] != facing[ef[:, 1]]
    ids = np.nonzero(sil)[0]
    if len(ids) == 0:
        return SilhouetteEdges(*[np.empty(s) for s in
                                 [(0,), (0, 2), (0, 2, 2), (0, 3), (0, 2),
                                  (0,), (0, 2), (0,), (0,)]])
    ep = mesh.edges[ids]
    p0, z0 = geom.project_batch(cam, v[ep[:, 0]])
    p1, z1 = geom.project_batch(cam, v[ep[:, 1]])
    mid3 = 0.5 * (v[ep[:, 0]] + v[ep[:, 1]])
    sb, zm = geom.project_batch(cam, mid3)
    valid = (z0 > 0) & (z1 > 0) & (zm > 0)
    if not valid.all():
        warnings.warn("silhouette edges straddling the camera plane dropped")
        ids = ids[valid]
        ep, p0, p1, mid3, sb = ep[valid], p0[valid], p1[valid], mid3[valid], sb[valid]
    b = p1 - p0
    blen = np.linalg.norm(b, axis=1)
    # Rotate the projected edge by 90 degrees, then orient away from the
    # projected third vertex of the front-facing adjacent triangle.
    nb = np.stack([-b[:, 1], b[:, 0]], axis=1)
    nz = blen > 0
    nb[nz] /= blen[nz, None]
    front_is_0 = facing[ef[ids, 0]]
    front = np.where(front_is_0, ef[ids, 0], ef[ids, 1])
    back = np.where(front_is_0, ef[ids, 1], ef[ids, 0])
    opp = mesh.edge_opposite_vertices[ids]
    opp_front = np.where(front_is_0, opp[:, 0], opp[:, 1])
    popp, _ = geom.project_batch(cam, v[opp_front])
    flip = np.einsum("ij,ij->i", nb, popp - sb) > 0
    nb[flip] *= -1.0
    return SilhouetteEdges(ids, ep, np.stack([p0, p1], axis=1), mid3, sb,
                           blen, nb, front, back)


# -- mesh file I/O ----------------------------------------------------------

def save_obj(path, mesh):
    """Write an ASCII OBJ file (triangles only)."""
    with open(path, "w") as fh:
        for p in mesh.vertices:
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def load_obj(path):
    verts = []
    faces = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise InvalidMesh("OBJ reader supports triangles only")
                faces.append(idx)
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_ply(path, mesh, vertex_colors=None, comments=()):
    """Write a binary little-endian PLY with float64 vertex precision.
    `vertex_colors` is an optional (n, 3) uint8 array."""
    nv, nf = mesh.n_vertices, mesh.n_faces
    with open(path, "wb") as fh:
        head = ["ply", "format binary_little_endian 1.0"]
        head += [f"comment {c}" for c in comments]
        head += [f"element vertex {nv}",
                 "property double x", "property double y", "property double z"]
        if vertex_colors is not None:
            head += ["property uchar red", "property uchar green",
                     "property uchar blue"]
        head += [f"element face {nf}",
                 "property list uchar int vertex_indices", "end_header"]
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if vertex_colors is None:
            fh.write(mesh.vertices.astype("<f8").tobytes())
        else:
            rec = np.zeros(nv, dtype=[("xyz", "<f8", 3), ("rgb", "u1", 3)])
            rec["xyz"] = mesh.vertices
            rec["rgb"] = vertex_colors
            fh.write(rec.tobytes())
        frec = np.zeros(nf, dtype=[("n", "u1"), ("idx", "<i4", 3)])
        frec["n"] = 3
        frec["idx"] = mesh.triangles
        fh.write(frec.tobytes())


def load_ply(path, with_colors=False):
    """Read the PLY subset written by save_ply (binary LE, double or float
    vertices, optional uchar colors, uchar-counted int face lists). With
    `with_colors`, returns (mesh, colors) where colors is (n, 3) uint8 or
    None when the file has no color properties."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise InvalidMesh("not a PLY file")
        nv = nf = 0
        vprops = []
        element = None
        while True:
            line = fh.readline()
            if not line:
                raise InvalidMesh("truncated PLY header")
            parts = line.decode("ascii").split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "format":
                if parts[1] != "binary_little_endian":
                    raise InvalidMesh("only binary little-endian PLY supported")
            elif parts[0] == "element":
                element = parts[1]
                if element == "vertex":
                    nv = int(parts[2])
                elif element == "face":
                    nf = int(parts[2])
            elif parts[0] == "property" and element == "vertex":
                vprops.append((parts[1], parts[2]))
            elif parts[0] == "end_header":
                break
        sizes = {"double": 8, "float": 4, "uchar": 1, "int": 4, "uint": 4}
        fmt = {"double": "<f8", "float": "<f4", "uchar": "u1", "int": "<i4",
               "uint": "<u4"}
        dtype = [(name, fmt[typ]) for typ, name in vprops]
        vdata = np.frombuffer(fh.read(nv * sum(sizes[t] for t, _ in vprops)),
                              dtype=dtype, count=nv)
        verts = np.stack([vdata["x"], vdata["y"], vdata["z"]],
                         axis=1).astype(np.float64)
        faces = np.empty((nf, 3), dtype=np.int64)
        raw = fh.read(nf * 13)
        frec = np.frombuffer(raw, dtype=[("n", "u1"), ("idx", "<i4", 3)],
                             count=nf)
        if nf and not np.all(frec["n"] == 3):
            raise InvalidMesh("PLY reader supports triangles only")
        faces[:] = frec["idx"]
    mesh = TriMesh(verts, faces)
    if not with_colors:
        return mesh
    names = [n for _, n in vprops]
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([vdata["red"], vdata["green"], vdata["blue"]],
                          axis=1).astype(np.uint8)
    else:
        colors = None
    return mesh, colors


def load_mesh(path):
    """Load OBJ or PLY based on the file extension."""
    s = str(path)
    if s.lower().endswith(".obj"):
        return load_obj(s)
    if s.lower().endswith(".ply"):
        return load_ply(s)
    raise InvalidMesh(f"unsupported mesh format: {s}")


def save_mesh(path, mesh):
    s = str(path)
    if s.lower().endswith(".obj"):
        save_obj(s, mesh)
    elif s.lower().endswith(".ply"):
        save_ply(s, mesh)
    else:
        raise InvalidMesh(f"unsupported mesh format: {s}")
