"""Visual hull construction: voxel space carving from multiview silhouette
masks and marching-cubes surface extraction."""

from dataclasses import dataclass

import numpy as np
from skimage import measure

from . import geom
from .mesh import TriMesh


class AllCarved(Exception):
    """Every voxel was carved away; the masks/cameras disagree."""


class NoSurface(Exception):
    """The occupancy grid has no inside/outside transition."""


@dataclass
class VoxelGrid:
    """Occupancy grid over an axis-aligned box."""

    resolution: tuple             # (nx, ny, nz)
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    occupancy: np.ndarray         # (nx, ny, nz) bool

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)

    @property
    def voxel_size(self):
        return (self.bbox_max - self.bbox_min) / np.array(self.resolution)

    def centers(self):
        """(nx*ny*nz, 3) voxel center coordinates, C-order over (x, y, z)."""
        nx, ny, nz = self.resolution
        ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        return self.bbox_min + (idx + 0.5) * self.voxel_size

    def point_index(self, pts):
        """Voxel index triples containing each point (may be out of range)."""
        return np.floor((pts - self.bbox_min) / self.voxel_size).astype(np.int64)


def _occupancy_for_bbox(masks, cams, bbox_min, bbox_max, resolution):
    nx, ny, nz = resolution
    grid = VoxelGrid(resolution, bbox_min, bbox_max,
                     np.ones(resolution, dtype=bool))
    pts = grid.centers()
    occ = np.ones(len(pts), dtype=bool)
    for mask, cam in zip(masks, cams):
        alive = np.nonzero(occ)[0]
        if len(alive) == 0:
            break
        px, z = geom.project_batch(cam, pts[alive])
        ok = z > 0
        chi = np.full(len(alive), geom.MASK_OUTSIDE, dtype=np.int64)
        chi[ok] = mask.chi_batch(px[ok])
        occ[alive[chi == geom.MASK_OUTSIDE]] = False
    grid.occupancy = occ.reshape(resolution)
    return grid


def infer_bbox(masks, cams, resolution=32, inflate=0.05):
    """Estimate a tight carving box: coarse-carve a generous box derived
    from the camera orbit, then take the occupied bounding box inflated by
    `inflate`."""
    centers = np.array([c.center for c in cams])
    target = centers.mean(axis=0)
    radius = np.linalg.norm(centers - target, axis=1).min()
    lo = target - radius
    hi = target + radius
    coarse = _occupancy_for_bbox(masks, cams, lo, hi, (resolution,) * 3)
    if not coarse.occupancy.any():
        raise AllCarved
    idx = np.argwhere(coarse.occupancy)
    vs = coarse.voxel_size
    bmin = lo + idx.min(axis=0) * vs
    bmax = lo + (idx.max(axis=0) + 1) * vs
    pad = inflate * (bmax - bmin)
    return bmin - pad, bmax + pad


def carve(masks, cams, resolution=128, bbox=None):
    """Carve the visual hull: a voxel stays occupied iff its center projects
    to Inside or Boundary in every view (projections outside an image count
    as Outside)."""
    if len(masks) == 0 or len(masks) != len(cams):
        raise ValueError("need matching, non-empty mask/camera lists")
    if bbox is None:
        bbox = infer_bbox(masks, cams)
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    grid = _occupancy_for_bbox(masks, cams, bbox[0], bbox[1], resolution)
    if not grid.occupancy.any():
        raise AllCarved
    return grid


def extract_surface(grid):
    """Marching-cubes mesh of the occupancy field at the 0.5 iso-level.
    The grid is zero-padded so the surface is always closed."""
    occ = grid.occupancy
    if not occ.any() or occ.all():
        raise NoSurface
    field = np.pad(occ.astype(np.float64), 1)
    verts, faces, _, _ = measure.marching_cubes(field, 0.5)
    verts = grid.bbox_min + (verts - 0.5) * grid.voxel_size
    m = TriMesh(verts, faces.astype(np.int64))
    if m.signed_volume() < 0:
        m = TriMesh(m.vertices, m.triangles[:, ::-1].copy())
    return m
