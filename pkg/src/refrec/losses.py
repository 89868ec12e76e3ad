"""The three loss terms (refraction, silhouette, smoothness) with per-vertex
gradients, and their weighted combination.

Gradient buffers are plain (n_vertices, 3) float64 arrays. All accumulation
uses np.add.at in a fixed order, so results are deterministic."""

from dataclasses import dataclass

import numpy as np

from . import geom
from .difftrace import _face_normal_jac
from .mesh import silhouette_edges


class ShapeMismatch(Exception):
    pass


def _scatter_rows(out, ids, rows):
    """out[ids] += rows for (n, 3) buffers, deterministic and faster than
    np.add.at."""
    flat = (3 * ids[:, None] + np.arange(3)).ravel()
    out += np.bincount(flat, weights=rows.ravel(),
                       minlength=out.size).reshape(out.shape)


def _scatter(out, ids, vals):
    out += np.bincount(ids, weights=vals, minlength=out.size)


@dataclass
class LossWeights:
    """Balancing coefficients: total = alpha * refraction
    + beta * silhouette + gamma * smoothness."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")

    @staticmethod
    def auto(cam_height, cam_width, edgelen):
        """Default balance: alpha = 1e4 / (H W), beta = 0.5 / min(H, W),
        gamma = 1e3 / mean edge length."""
        return LossWeights(1e4 / (cam_height * cam_width),
                           0.5 / min(cam_height, cam_width),
                           1e3 / edgelen)


def refraction_loss(mesh, batch, out=None, curv=None):
    """Sum of squared monitor-pixel errors ||Q - Q'||^2 over a path batch;
    accumulates 2 (Q' - Q)^T dQ'/dv into each of the six vertices per
    sample. The batch must carry Jacobians. `curv`, if given, receives the
    per-vertex diagonal Gauss-Newton curvature 2 sum ||J_slot||_F^2."""
    if batch.size == 0:
        return 0.0
    diff = batch.qprime - batch.q
    loss = float(np.einsum("sc,sc->", diff, diff))
    if out is not None or curv is not None:
        if batch.jac is None:
            raise ValueError("path batch carries no jacobians")
        vids = np.concatenate([mesh.triangles[batch.f1],
                               mesh.triangles[batch.f2]], axis=1)
        if out is not None:
            g = 2.0 * np.einsum("sc,skcj->skj", diff, batch.jac)
            _scatter_rows(out, vids.ravel(), g.reshape(-1, 3))
        if curv is not None:
            h = 2.0 * np.einsum("skcj,skcj->sk", batch.jac, batch.jac)
            _scatter(curv, vids.ravel(), h.ravel())
    return loss


def silhouette_loss(mesh, cams, masks, out=None, sils=None, curv=None):
    """Count of silhouette-edge midpoints falling strictly inside or
    outside the per-view masks. The manually defined gradient pushes each
    misclassified edge along its image-space outward normal: per endpoint,
    -(1/2) chi ||b|| J_proj^T N_b, where J_proj is the projection Jacobian
    at the 3D midpoint. `curv`, if given, receives the squared norm of that
    per-endpoint direction for every silhouette edge (misclassified or
    not)."""
    total = 0.0
    fn = mesh.face_normals() if sils is None else None
    for i, (cam, mask) in enumerate(zip(cams, masks)):
        sil = sils[i] if sils is not None else silhouette_edges(mesh, cam, fn)
        if len(sil.edge_ids) == 0:
            continue
        chi = mask.chi_batch(sil.midpoints).astype(np.float64)
        total += float(np.abs(chi).sum())
        if curv is not None:
            jp_all = geom.projection_jacobian_batch(cam, sil.midpoints_3d)
            d3 = 0.5 * np.einsum("scj,sc->sj", jp_all,
                                 sil.lengths_2d[:, None] * sil.normals_2d)
            h = np.einsum("sj,sj->s", d3, d3)
            _scatter(curv, sil.endpoints[:, 0], h)
            _scatter(curv, sil.endpoints[:, 1], h)
        if out is None:
            continue
        active = chi != 0
        if not active.any():
            continue
        jp = geom.projection_jacobian_batch(cam, sil.midpoints_3d[active])
        # 2D descent direction chi ||b|| N_b pulled back to 3D; gradient is
        # its negation, half per endpoint.
        g2 = (chi[active] * sil.lengths_2d[active])[:, None] \
            * sil.normals_2d[active]
        g3 = -0.5 * np.einsum("scj,sc->sj", jp, g2)
        ep = sil.endpoints[active]
        _scatter_rows(out, ep[:, 0], g3)
        _scatter_rows(out, ep[:, 1], g3)
    return total


def smoothness_loss(mesh, out=None, clamp=1e-7, curv=None):
    """Sum over edges of -log(1 + <N1, N2>) for the adjacent-face normals,
    with the dot product clamped to [-1 + clamp, 1]; gradients flow through
    both normals (zero where clamped). `curv`, if given, receives the
    per-vertex diagonal Gauss-Newton curvature sum (1/(1+dot))^2
    ||d dot / dx||^2."""
    ef = mesh.edge_faces
    with_grad = out is not None or curv is not None
    # Face normals (and their jacobians) once per face, not once per
    # edge-side: each face borders three edges.
    n, jn = _face_normal_jac(mesh.vertices[mesh.triangles], with_grad)
    n1, n2 = n[ef[:, 0]], n[ef[:, 1]]
    dot = np.einsum("si,si->s", n1, n2)
    clamped = np.clip(dot, -1.0 + clamp, 1.0)
    loss = float(-np.log1p(clamped).sum())
    if with_grad:
        live = (dot > -1.0 + clamp) & (dot < 1.0)
        d1 = np.einsum("si,skij->skj", n2, jn[ef[:, 0]])
        d2 = np.einsum("si,skij->skj", n1, jn[ef[:, 1]])
        if out is not None:
            coef = np.where(live, -1.0 / (1.0 + clamped), 0.0)
            _scatter_rows(out, mesh.triangles[ef[:, 0]].ravel(),
                          (coef[:, None, None] * d1).reshape(-1, 3))
            _scatter_rows(out, mesh.triangles[ef[:, 1]].ravel(),
                          (coef[:, None, None] * d2).reshape(-1, 3))
        if curv is not None:
            c2 = np.where(live, 1.0 / (1.0 + clamped) ** 2, 0.0)
            _scatter(curv, mesh.triangles[ef[:, 0]].ravel(),
                     (c2[:, None] * np.einsum("skj,skj->sk", d1, d1)).ravel())
            _scatter(curv, mesh.triangles[ef[:, 1]].ravel(),
                     (c2[:, None] * np.einsum("skj,skj->sk", d2, d2)).ravel())
    return loss


def total_loss(components, grads, weights):
    """Combine (refract, silhouette, smooth) scalar losses and gradient
    buffers with the balancing weights. Returns (loss, gradient)."""
    lr, ls, lm = components
    gr, gs, gm = grads
    if not (gr.shape == gs.shape == gm.shape):
        raise ShapeMismatch
    loss = weights.alpha * lr + weights.beta * ls + weights.gamma * lm
    grad = weights.alpha * gr + weights.beta * gs + weights.gamma * gm
    return loss, grad
