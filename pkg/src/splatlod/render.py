"""CPU differentiable splat renderer.

Forward: activate parameters, project each Gaussian with the local-affine
(EWA) approximation cov2d = J W Sigma W^T J^T, add the 0.3 px^2 low-pass
floor, evaluate SH color along the per-Gaussian view direction, sort by
camera depth (index as tie-breaker), and composite front-to-back.

Backward: adjoint kernel over the compositing equation plus a vectorized
chain rule through projection, covariance assembly, quaternion
normalization, the activations, and the SH basis, yielding gradients for
every raw model parameter. Gaussians culled in the forward pass receive
zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import kernels
from .model import GaussianModel, subset
from .sh import evaluate_sh_batch, sh_basis, sh_basis_grad
from .views import Camera

if TYPE_CHECKING:
    from .hierarchy import Hierarchy

# Camera-space near plane below which Gaussians are culled (world units).
NEAR_PLANE = 0.01
# Low-pass floor added to the projected covariance diagonal (pixels^2).
COV2D_FLOOR = 0.3


@dataclass
class GradientBuffer:
    d_positions: np.ndarray      # (N, 3)
    d_sh: np.ndarray             # (N, 16, 3)
    d_opacity_logit: np.ndarray  # (N,)
    d_scale_log: np.ndarray      # (N, 3)
    d_rotation: np.ndarray       # (N, 4)

    @classmethod
    def zeros(cls, n: int) -> "GradientBuffer":
        return cls(
            np.zeros((n, 3)), np.zeros((n, 16, 3)), np.zeros(n),
            np.zeros((n, 3)), np.zeros((n, 4)),
        )

    def flat_per_gaussian(self) -> np.ndarray:
        """All 59 gradient entries of each Gaussian as one (N, 59) array."""
        n = self.d_opacity_logit.shape[0]
        return np.concatenate([
            self.d_positions.reshape(n, 3),
            self.d_sh.reshape(n, 48),
            self.d_opacity_logit.reshape(n, 1),
            self.d_scale_log.reshape(n, 3),
            self.d_rotation.reshape(n, 4),
        ], axis=1)


@dataclass
class _Prep:
    """Per-view projection state for the retained (visible) Gaussians in
    depth-sorted order; `ret` maps sorted position back to model row."""
    ret: np.ndarray        # (K,)
    means2d: np.ndarray    # (K, 2)
    conics: np.ndarray     # (K, 3) packed (a, b, c) of inv(cov2d + floor)
    colors: np.ndarray     # (K, 3) clamped SH colors
    opacities: np.ndarray  # (K,) effective opacity (after alpha multiplier)
    bboxes: np.ndarray     # (K, 4) inclusive pixel bounds (r0, r1, c0, c1)
    t_cam: np.ndarray      # (K, 3)
    sigma: np.ndarray      # (K, 3, 3)
    m3: np.ndarray         # (K, 3, 3) R @ diag(s)
    rot3: np.ndarray       # (K, 3, 3)
    s: np.ndarray          # (K, 3) exp(scale_log)
    q_hat: np.ndarray      # (K, 4) normalized quaternion
    q_norm: np.ndarray     # (K,)
    t23: np.ndarray        # (K, 2, 3) J @ W
    opa_act: np.ndarray    # (K,) sigmoid(opacity_logit)
    alpha_mult: np.ndarray  # (K,)
    dirs: np.ndarray       # (K, 3) unit view directions
    dist: np.ndarray       # (K,)
    basis: np.ndarray      # (K, 16)
    sh: np.ndarray         # (K, 16, 3) coefficients of retained Gaussians
    color_pre: np.ndarray  # (K, 3) pre-clamp SH colors


def _quat_to_rot(q_hat: np.ndarray) -> np.ndarray:
    w, x, y, z = q_hat[:, 0], q_hat[:, 1], q_hat[:, 2], q_hat[:, 3]
    rot = np.empty((q_hat.shape[0], 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def _prepare(model: GaussianModel, camera: Camera, alpha_mult=None) -> _Prep:
    n = model.n
    mult = np.ones(n) if alpha_mult is None else np.asarray(alpha_mult, dtype=np.float64)
    t_cam_all = model.positions @ camera.rotation.T + camera.translation
    opa_all = 1.0 / (1.0 + np.exp(-model.opacity_logit))
    eff_all = opa_all * mult

    # Cull: behind the near plane, or too transparent to ever pass the
    # 1/255 alpha cutoff anywhere.
    keep = (t_cam_all[:, 2] > NEAR_PLANE) & (eff_all * 255.0 > 1.0)
    idx = np.nonzero(keep)[0]

    t_cam = t_cam_all[idx]
    tz = t_cam[:, 2]
    means2d = np.stack([
        camera.fx * t_cam[:, 0] / tz + camera.cx,
        camera.fy * t_cam[:, 1] / tz + camera.cy,
    ], axis=1)

    q = model.rotation[idx]
    q_norm = np.linalg.norm(q, axis=1)
    q_hat = q / q_norm[:, None]
    rot3 = _quat_to_rot(q_hat)
    s = np.exp(model.scale_log[idx])
    m3 = rot3 * s[:, None, :]
    sigma = m3 @ m3.transpose(0, 2, 1)

    k = idx.size
    jac = np.zeros((k, 2, 3))
    jac[:, 0, 0] = camera.fx / tz
    jac[:, 0, 2] = -camera.fx * t_cam[:, 0] / tz**2
    jac[:, 1, 1] = camera.fy / tz
    jac[:, 1, 2] = -camera.fy * t_cam[:, 1] / tz**2
    t23 = jac @ camera.rotation
    cov2d = t23 @ sigma @ t23.transpose(0, 2, 1)
    ma = cov2d[:, 0, 0] + COV2D_FLOOR
    mb = cov2d[:, 0, 1]
    mc = cov2d[:, 1, 1] + COV2D_FLOOR
    det = ma * mc - mb * mb
    conics = np.stack([mc / det, -mb / det, ma / det], axis=1)

    # Conservative footprint: beyond radius r with r^2 = 2*lam_max*ln(255*o)
    # the quadratic form already exceeds the alpha cutoff.
    eff = eff_all[idx]
    lam_max = 0.5 * (ma + mc) + np.sqrt(0.25 * (ma - mc) ** 2 + mb * mb)
    radius = np.sqrt(2.0 * lam_max * np.log(255.0 * eff))
    c0 = np.maximum(0, np.ceil(means2d[:, 0] - radius - 0.5)).astype(np.int64)
    c1 = np.minimum(camera.width - 1, np.floor(means2d[:, 0] + radius - 0.5)).astype(np.int64)
    r0 = np.maximum(0, np.ceil(means2d[:, 1] - radius - 0.5)).astype(np.int64)
    r1 = np.minimum(camera.height - 1, np.floor(means2d[:, 1] + radius - 0.5)).astype(np.int64)
    on_screen = (c0 <= c1) & (r0 <= r1)

    sel = np.nonzero(on_screen)[0]
    sel = sel[np.lexsort((idx[sel], tz[sel]))]  # depth sort, index tie-break

    dirs_raw = model.positions[idx[sel]] - camera.center
    dist = np.linalg.norm(dirs_raw, axis=1)
    dirs = dirs_raw / dist[:, None]
    basis = sh_basis(dirs)
    sh = model.sh_coeffs[idx[sel]]
    colors, color_pre = evaluate_sh_batch(sh, dirs)

    return _Prep(
        ret=idx[sel],
        means2d=np.ascontiguousarray(means2d[sel]),
        conics=np.ascontiguousarray(conics[sel]),
        colors=np.ascontiguousarray(colors),
        opacities=np.ascontiguousarray(eff[sel]),
        bboxes=np.ascontiguousarray(
            np.stack([r0[sel], r1[sel], c0[sel], c1[sel]], axis=1)),
        t_cam=t_cam[sel],
        sigma=sigma[sel],
        m3=m3[sel],
        rot3=rot3[sel],
        s=s[sel],
        q_hat=q_hat[sel],
        q_norm=q_norm[sel],
        t23=t23[sel],
        opa_act=opa_all[idx[sel]],
        alpha_mult=mult[idx[sel]],
        dirs=dirs,
        dist=dist,
        basis=basis,
        sh=sh,
        color_pre=color_pre,
    )


def _forward(prep: _Prep, camera: Camera, background: np.ndarray):
    return kernels.forward_kernel(
        prep.means2d, prep.conics, prep.colors, prep.opacities, prep.bboxes,
        background, camera.height, camera.width,
    )


def render(model: GaussianModel, camera: Camera, background,
           alpha_mult=None) -> np.ndarray:
    """Front-to-back composited image (H, W, 3)."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    prep = _prepare(model, camera, alpha_mult)
    image, _, _ = _forward(prep, camera, bg)
    return image


def render_backward(model: GaussianModel, camera: Camera, d_image: np.ndarray,
                    background=(0.0, 0.0, 0.0), alpha_mult=None) -> GradientBuffer:
    """Gradient of sum(d_image * render(model, camera, background)) with
    respect to every raw model parameter."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    d_image = np.ascontiguousarray(d_image, dtype=np.float64)
    if d_image.shape != (camera.height, camera.width, 3):
        raise ValueError(f"d_image shape {d_image.shape} does not match camera")
    grads = GradientBuffer.zeros(model.n)
    prep = _prepare(model, camera, alpha_mult)
    if prep.ret.size == 0:
        return grads
    _, trans_final, last = _forward(prep, camera, bg)
    d_means, d_conics, d_colors, d_oeff = kernels.backward_kernel(
        prep.means2d, prep.conics, prep.colors, prep.opacities, prep.bboxes,
        bg, d_image, trans_final, last,
    )

    # Opacity: effective = mult * sigmoid(logit).
    d_opa_act = d_oeff * prep.alpha_mult
    d_logit = d_opa_act * prep.opa_act * (1.0 - prep.opa_act)

    # Color -> SH coefficients and view direction (through the >=0 clamp).
    live = (prep.color_pre > 0.0).astype(np.float64)
    d_pre = d_colors * live
    d_sh = prep.basis[:, :, None] * d_pre[:, None, :]
    d_basis = np.einsum("kjc,kc->kj", prep.sh, d_pre)
    d_dir = np.einsum("kj,kji->ki", d_basis, sh_basis_grad(prep.dirs))
    # dir = (p - cam) / dist: project out the radial component.
    radial = np.einsum("ki,ki->k", prep.dirs, d_dir)
    d_pos_dir = (d_dir - prep.dirs * radial[:, None]) / prep.dist[:, None]

    # Conic -> cov2d (through the 2x2 inverse), as symmetric cotangents.
    kk = prep.ret.size
    g_con = np.empty((kk, 2, 2))
    g_con[:, 0, 0] = d_conics[:, 0]
    g_con[:, 0, 1] = 0.5 * d_conics[:, 1]
    g_con[:, 1, 0] = 0.5 * d_conics[:, 1]
    g_con[:, 1, 1] = d_conics[:, 2]
    con = np.empty_like(g_con)
    con[:, 0, 0] = prep.conics[:, 0]
    con[:, 0, 1] = prep.conics[:, 1]
    con[:, 1, 0] = prep.conics[:, 1]
    con[:, 1, 1] = prep.conics[:, 2]
    g_cov = -con @ g_con @ con  # d inv(M) = -M^-1 dM M^-1; floor is additive

    # cov2d = T Sigma T^T with T = J W.
    g_sigma = prep.t23.transpose(0, 2, 1) @ g_cov @ prep.t23
    d_t23 = 2.0 * g_cov @ prep.t23 @ prep.sigma
    d_jac = d_t23 @ camera.rotation.T

    # Projection Jacobian and pixel means -> camera-space position.
    tx, ty, tz = prep.t_cam[:, 0], prep.t_cam[:, 1], prep.t_cam[:, 2]
    fx, fy = camera.fx, camera.fy
    d_tcam = np.zeros((kk, 3))
    d_tcam[:, 0] = d_means[:, 0] * fx / tz + d_jac[:, 0, 2] * (-fx / tz**2)
    d_tcam[:, 1] = d_means[:, 1] * fy / tz + d_jac[:, 1, 2] * (-fy / tz**2)
    d_tcam[:, 2] = (
        -d_means[:, 0] * fx * tx / tz**2
        - d_means[:, 1] * fy * ty / tz**2
        + d_jac[:, 0, 0] * (-fx / tz**2)
        + d_jac[:, 1, 1] * (-fy / tz**2)
        + d_jac[:, 0, 2] * (2.0 * fx * tx / tz**3)
        + d_jac[:, 1, 2] * (2.0 * fy * ty / tz**3)
    )
    d_pos = d_tcam @ camera.rotation + d_pos_dir

    # Sigma = M3 M3^T -> scales and rotation.
    d_m3 = 2.0 * g_sigma @ prep.m3
    d_s = np.einsum("kij,kij->kj", d_m3, prep.rot3)
    d_scale_log = d_s * prep.s
    d_rot3 = d_m3 * prep.s[:, None, :]
    d_qhat = _rot_backward(prep.q_hat, d_rot3)
    # Quaternion normalization: q_hat = q / |q|.
    inner = np.einsum("ki,ki->k", prep.q_hat, d_qhat)
    d_q = (d_qhat - prep.q_hat * inner[:, None]) / prep.q_norm[:, None]

    # Retained rows are unique, so scatter is plain assignment.
    grads.d_positions[prep.ret] = d_pos
    grads.d_sh[prep.ret] = d_sh
    grads.d_opacity_logit[prep.ret] = d_logit
    grads.d_scale_log[prep.ret] = d_scale_log
    grads.d_rotation[prep.ret] = d_q
    return grads


def _rot_backward(q_hat: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Cotangent of the quaternion-to-rotation map at the normalized
    quaternion; d_rot (K, 3, 3) -> (K, 4)."""
    w, x, y, z = q_hat[:, 0], q_hat[:, 1], q_hat[:, 2], q_hat[:, 3]
    g = d_rot
    d_w = (
        g[:, 0, 1] * (-2 * z) + g[:, 0, 2] * (2 * y)
        + g[:, 1, 0] * (2 * z) + g[:, 1, 2] * (-2 * x)
        + g[:, 2, 0] * (-2 * y) + g[:, 2, 1] * (2 * x)
    )
    d_x = (
        g[:, 0, 1] * (2 * y) + g[:, 0, 2] * (2 * z)
        + g[:, 1, 0] * (2 * y) + g[:, 1, 1] * (-4 * x) + g[:, 1, 2] * (-2 * w)
        + g[:, 2, 0] * (2 * z) + g[:, 2, 1] * (2 * w) + g[:, 2, 2] * (-4 * x)
    )
    d_y = (
        g[:, 0, 0] * (-4 * y) + g[:, 0, 1] * (2 * x) + g[:, 0, 2] * (2 * w)
        + g[:, 1, 0] * (2 * x) + g[:, 1, 2] * (2 * z)
        + g[:, 2, 0] * (-2 * w) + g[:, 2, 1] * (2 * z) + g[:, 2, 2] * (-4 * y)
    )
    d_z = (
        g[:, 0, 0] * (-4 * z) + g[:, 0, 1] * (-2 * w) + g[:, 0, 2] * (2 * x)
        + g[:, 1, 0] * (2 * w) + g[:, 1, 1] * (-4 * z) + g[:, 1, 2] * (2 * y)
        + g[:, 2, 0] * (2 * x) + g[:, 2, 1] * (2 * y)
    )
    return np.stack([d_w, d_x, d_y, d_z], axis=1)


def render_transition(model: GaussianModel, hierarchy: "Hierarchy", level: int,
                      t: float, camera: Camera, background) -> np.ndarray:
    """Cross-fade between adjacent detail levels: renders G_level plus the
    next enhancement layer with its opacity scaled by t. t=0 and t=1
    reproduce the two level renders bit-exactly."""
    if not 0 <= level < hierarchy.levels - 1:
        raise ValueError(f"transition level {level} out of range")
    if not 0.0 <= float(t) <= 1.0:
        raise ValueError(f"interpolation factor {t} outside [0, 1]")
    base_idx = hierarchy.active_indices(level)
    enh_idx = hierarchy.enhancements[level]
    sub = subset(model, np.concatenate([base_idx, enh_idx]))
    mult = np.concatenate([np.ones(base_idx.size), np.full(enh_idx.size, float(t))])
    return render(sub, camera, background, alpha_mult=mult)
