"""Mesh reconstruction of solid transparent objects from ray-refraction
correspondences against a coded background monitor.

The pipeline: simulate (or load) per-view pixel-to-monitor correspondences
and silhouette masks, carve a visual hull, then alternate isotropic
remeshing with gradient descent on a combined refraction / silhouette /
smoothness loss, coarse to fine.
"""

from .geom import (Camera, Mask, MonitorPlane, refract, refract_batch,
                   look_at_camera, TotalInternalReflection)
from .mesh import (TriMesh, load_mesh, save_mesh, load_obj, save_obj,
                   load_ply, save_ply, mesh_stats, silhouette_edges)
from .accel import Bvh, Miss
from .shapes import blob, cube, icosphere
from .capture import (Scene, CorrespondenceMap, orbit_rig, simulate_view,
                      matting_pipeline, trace_forward, encode_gray,
                      decode_gray, save_corr, load_corr, save_mask_pgm,
                      load_mask_pgm)
from .carve import VoxelGrid, carve, extract_surface, infer_bbox
from .remesh import RemeshParams, remesh
from .difftrace import PathBatch, find_paths, eval_paths
from .losses import (LossWeights, refraction_loss, silhouette_loss,
                     smoothness_loss, total_loss)
from .optim import SceneData, StageSchedule, reconstruct, run_stage
from .evaluate import ErrorReport, per_vertex_error, coverage, icp_align

__version__ = "0.1.0"

__all__ = [
    "Camera", "Mask", "MonitorPlane", "refract", "refract_batch",
    "look_at_camera", "TotalInternalReflection",
    "TriMesh", "load_mesh", "save_mesh", "load_obj", "save_obj",
    "load_ply", "save_ply", "mesh_stats", "silhouette_edges",
    "Bvh", "Miss",
    "blob", "cube", "icosphere",
    "Scene", "CorrespondenceMap", "orbit_rig", "simulate_view",
    "matting_pipeline", "trace_forward", "encode_gray", "decode_gray",
    "save_corr", "load_corr", "save_mask_pgm", "load_mask_pgm",
    "VoxelGrid", "carve", "extract_surface", "infer_bbox",
    "RemeshParams", "remesh",
    "PathBatch", "find_paths", "eval_paths",
    "LossWeights", "refraction_loss", "silhouette_loss", "smoothness_loss",
    "total_loss",
    "SceneData", "StageSchedule", "reconstruct", "run_stage",
    "ErrorReport", "per_vertex_error", "coverage", "icp_align",
    "__version__",
]
