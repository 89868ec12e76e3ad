"""Coarse-to-fine reconstruction driver: stage scheduling, view sampling,
Nesterov momentum descent, and remeshing between stages."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .accel import Bvh
from .difftrace import find_paths
from .losses import LossWeights, refraction_loss, silhouette_loss, \
    smoothness_loss, total_loss
from .mesh import mesh_stats, save_ply, target_length
from .remesh import RemeshParams, remesh

N_SILHOUETTE_VIEWS = 9

# Per-term trust regions, as fractions of the stage's mean edge length so
# they tighten as the mesh refines. Each loss term takes a per-vertex
# diagonally-preconditioned Gauss-Newton step clamped to its cap; the caps
# keep single-view steps from overshooting (and from folding faces over on
# fine meshes) while the preconditioning makes them scale-invariant. The
# silhouette counting loss has constant-magnitude gradients, so its capped
# step acts as a bounded push toward the mask's boundary band that vanishes
# inside it.
CAP_REFRACTION = 0.1
CAP_SILHOUETTE = 0.025
CAP_SMOOTHNESS = 0.025
DAMPING = 1e-3

# Each residual couples several vertices (a two-refraction path touches the
# six vertices of its entry and exit faces, a dihedral angle four, a
# silhouette edge two), but the diagonal curvature is accumulated as if each
# vertex corrected its residuals alone, so the simultaneous update can
# overshoot by up to the coupling count. Dividing each term's step by a
# coupling factor keeps it inside the stable range of the momentum
# iteration (overshoot < 2 (1 + momentum)); refraction uses half its
# worst-case count of six, trading margin for convergence speed, which the
# ground-truth fixed-point and error-halving suites both exercise.
COUPLING_REFRACTION = 3.0
COUPLING_SILHOUETTE = 2.0
COUPLING_SMOOTHNESS = 4.0


class TooFewViews(Exception):
    pass


class NonFiniteGradient(Exception):
    pass


@dataclass
class StageSchedule:
    """Optimization schedule. Learning rates are fractions of the initial
    mesh bounding-box diagonal; they decay linearly from lr_start to lr_end
    over all stages * iters_per_stage iterations."""

    n_stages: int = 10
    iters_per_stage: int = 500
    lr_start: float = 0.005
    lr_end: float = 0.002
    momentum: float = 0.5

    def __post_init__(self):
        if self.n_stages < 1 or self.iters_per_stage < 1:
            raise ValueError("need at least one stage and one iteration")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")


@dataclass
class SceneData:
    """Everything the reconstructor consumes: per-view cameras, monitor
    poses, observed correspondences, and silhouette masks."""

    cameras: list
    monitors: list
    corrs: list
    masks: list
    eta: float

    @property
    def n_views(self):
        return len(self.cameras)


@dataclass
class OptimizerState:
    velocity: np.ndarray
    iteration: int = 0


def sample_views(rng, n_views):
    """One uniformly random refraction view plus nine silhouette views
    stepped round(n_views / 9) apart from a random start (all distinct)."""
    if n_views < N_SILHOUETTE_VIEWS:
        raise TooFewViews(f"need at least {N_SILHOUETTE_VIEWS} views")
    refr = int(rng.integers(n_views))
    step = max(1, round(n_views / N_SILHOUETTE_VIEWS))
    start = int(rng.integers(n_views))
    sil = [(start + k * step) % n_views for k in range(N_SILHOUETTE_VIEWS)]
    if len(set(sil)) != N_SILHOUETTE_VIEWS:
        # Wrap collisions (n_views barely above 9): fall back to evenly
        # spread distinct views.
        sil = [(start + (k * n_views) // N_SILHOUETTE_VIEWS) % n_views
               for k in range(N_SILHOUETTE_VIEWS)]
    return refr, sil


def lr_at(schedule, stage, iteration, diaglen):
    """Linearly interpolated learning rate at (stage, iteration), both
    0-based, in world units."""
    total = schedule.n_stages * schedule.iters_per_stage
    k = stage * schedule.iters_per_stage + iteration
    f = k / (total - 1) if total > 1 else 0.0
    return (schedule.lr_start + f * (schedule.lr_end - schedule.lr_start)) \
        * diaglen


def nesterov_step(state, vertices, grad, lr, momentum=0.9, v_max=None):
    """Momentum descent (gradient evaluated at the current iterate):
    v <- mu v - lr g; x <- x + v. Updates vertices in place. `v_max`, if
    given, clamps the per-vertex velocity norm before it is applied."""
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient
    state.velocity *= momentum
    state.velocity -= lr * grad
    if v_max is not None:
        state.velocity = _clamp_rows(state.velocity, v_max)
    vertices += state.velocity
    state.iteration += 1
    return vertices


def _clamp_rows(vecs, cap):
    """Clamp each row's Euclidean norm to `cap`."""
    norms = np.linalg.norm(vecs, axis=1)
    scale = np.minimum(1.0, cap / np.maximum(norms, 1e-300))
    return vecs * scale[:, None]


def _precondition(grad, curv, cap, coupling=1.0):
    """Per-vertex diagonal Gauss-Newton step g / (coupling h + damping),
    clamped to `cap`. Zero gradients map to zero steps, so loss fixed points
    are also fixed points of the step rule."""
    if not curv.any():
        return np.zeros_like(grad)
    step = grad / (coupling * curv + DAMPING * curv.max())[:, None]
    return _clamp_rows(step, cap)


def run_stage(mesh, data, stage, schedule, weights=None, rng=None,
              diaglen=None, log_rows=None):
    """Run one optimization stage on `mesh` (modified in place): per
    iteration, rebuild the BVH, re-trace the paths of one random view,
    evaluate the weighted loss over that view, nine silhouette views, and
    all edges, then take one momentum step."""
    if rng is None:
        rng = np.random.default_rng(0)
    stats = mesh_stats(mesh)
    if diaglen is None:
        diaglen = stats["diaglen"]
    cam = data.cameras[0]
    auto = LossWeights.auto(cam.height, cam.width, stats["edgelen"])
    if weights is None:
        weights = auto
    # The balancing weights act as ratios to the defaults: with auto
    # weights each term contributes its unit trust-region step, a zero
    # weight disables its term, and scaling a weight scales its step.
    c_r = weights.alpha / auto.alpha
    c_s = weights.beta / auto.beta
    c_m = weights.gamma / auto.gamma
    cap_r = CAP_REFRACTION * stats["edgelen"]
    cap_s = CAP_SILHOUETTE * stats["edgelen"]
    cap_m = CAP_SMOOTHNESS * stats["edgelen"]
    v_max = 1.5 * (cap_r + cap_s + cap_m)
    state = OptimizerState(np.zeros_like(mesh.vertices))
    for it in range(schedule.iters_per_stage):
        bvh = Bvh(mesh)
        refr, sil_views = sample_views(rng, data.n_views)
        batch = find_paths(mesh, bvh, data.cameras[refr], data.corrs[refr],
                           data.monitors[refr], data.eta, with_grad=True)
        g_r = np.zeros_like(mesh.vertices)
        g_s = np.zeros_like(mesh.vertices)
        g_m = np.zeros_like(mesh.vertices)
        h_r = np.zeros(mesh.n_vertices)
        h_s = np.zeros(mesh.n_vertices)
        h_m = np.zeros(mesh.n_vertices)
        l_r = refraction_loss(mesh, batch, g_r, curv=h_r)
        l_s = silhouette_loss(mesh, [data.cameras[v] for v in sil_views],
                              [data.masks[v] for v in sil_views], g_s,
                              curv=h_s)
        l_m = smoothness_loss(mesh, g_m, curv=h_m)
        loss, _ = total_loss((l_r, l_s, l_m), (g_r, g_s, g_m), weights)
        step = c_r * _precondition(g_r, h_r, cap_r, COUPLING_REFRACTION) \
            + c_s * _precondition(g_s, h_s, cap_s, COUPLING_SILHOUETTE) \
            + c_m * _precondition(g_m, h_m, cap_m, COUPLING_SMOOTHNESS)
        # The schedule enters as a dimensionless factor decaying linearly
        # from 1 to lr_end / lr_start; the step already carries units.
        lr = lr_at(schedule, stage, it, diaglen) \
            / (schedule.lr_start * diaglen)
        nesterov_step(state, mesh.vertices, step, lr, schedule.momentum,
                      v_max=v_max)
        if log_rows is not None:
            log_rows.append((stage + 1, it, l_r, l_s, l_m, loss, batch.size))
    return mesh


def reconstruct(hull, data, schedule=None, weights=None, seed=0,
                checkpoint_dir=None, loss_log_path=None):
    """Full coarse-to-fine reconstruction: for each stage, remesh to the
    stage target edge length, then optimize. Returns the final mesh.

    `weights` may be a LossWeights (fixed for all stages), None (recomputed
    per stage from the image size and current mean edge length), or a dict
    of per-component overrides merged into the per-stage defaults."""
    if schedule is None:
        schedule = StageSchedule()
    rng = np.random.default_rng(seed)
    stats = mesh_stats(hull)
    diaglen = stats["diaglen"]
    mesh = hull.copy()
    log_rows = []
    for stage in range(schedule.n_stages):
        t_l = target_length(stage + 1, schedule.n_stages, diaglen)
        mesh = remesh(mesh, RemeshParams(t_l, 0.005 * diaglen))
        w = weights
        if w is None or isinstance(w, dict):
            cam = data.cameras[0]
            w = LossWeights.auto(cam.height, cam.width,
                                 mesh_stats(mesh)["edgelen"])
            for key, val in (weights or {}).items():
                setattr(w, key, float(val))
        run_stage(mesh, data, stage, schedule, w, rng, diaglen, log_rows)
        if checkpoint_dir is not None:
            save_ply(f"{checkpoint_dir}/stage_{stage + 1}.ply", mesh)
    if loss_log_path is not None:
        with open(loss_log_path, "w", newline="") as fh:
            wtr = csv.writer(fh)
            wtr.writerow(["stage", "iter", "refraction", "silhouette",
                          "smoothness", "total", "valid_path_count"])
            wtr.writerows(log_rows)
    return mesh
