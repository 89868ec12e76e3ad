"""Procedural test geometry: icospheres, bumpy blobs, cubes."""

import numpy as np

from .mesh import TriMesh


def icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v[0])
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return TriMesh(v, f)


def icosphere(subdivisions=3, radius=1.0):
    """Unit icosahedron subdivided `subdivisions` times and projected onto
    the sphere of the given radius. 20 * 4**subdivisions faces."""
    mesh = icosahedron()
    verts = [p for p in mesh.vertices]
    faces = mesh.triangles.tolist()
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc],
                          [ab, bc, ca]]
        faces = new_faces
    v = np.array(verts) * radius
    return TriMesh(v, np.array(faces, dtype=np.int64))


def blob(subdivisions=4, radius=1.0, bump_amplitude=0.18, bump_sigma=0.45,
         centers=None):
    """Icosphere displaced radially by smooth Gaussian bumps; a mostly
    convex, non-trivial test solid."""
    if centers is None:
        centers = np.array([
            [1.0, 0.3, 0.2],
            [-0.5, 0.6, -0.6],
            [0.1, -0.8, 0.6],
        ])
    centers = np.array([c / np.linalg.norm(c) for c in centers])
    mesh = icosphere(subdivisions, 1.0)
    dirs = mesh.vertices
    r = np.full(len(dirs), radius)
    for c in centers:
        d2 = np.linalg.norm(dirs - c, axis=1) ** 2
        r += bump_amplitude * np.exp(-d2 / bump_sigma ** 2)
    return TriMesh(dirs * r[:, None], mesh.triangles.copy())


def cube(half_extent=1.0, center=(0.0, 0.0, 0.0)):
    """Axis-aligned cube of 12 triangles with outward winding."""
    c = np.asarray(center, dtype=np.float64)
    h = half_extent
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h)
                  for z in (-h, h)]) + c
    f = np.array([
        [0, 1, 3], [0, 3, 2],          # -x
        [4, 6, 7], [4, 7, 5],          # +x
        [0, 4, 5], [0, 5, 1],          # -y
        [2, 3, 7], [2, 7, 6],          # +y
        [0, 2, 6], [0, 6, 4],          # -z
        [1, 5, 7], [1, 7, 3],          # +z
    ], dtype=np.int64)
    return TriMesh(v, f)
