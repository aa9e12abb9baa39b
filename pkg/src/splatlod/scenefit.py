"""Desk-scale scene fitting and synthetic ground-truth generation.

fit() stands in for a full splatting training run: a fixed number of
Gaussians is initialized inside the cameras' common viewing volume and
optimized against the posed targets with the standard rendering loss. No
densification or pruning: the count never changes.

make_synthetic_scene() renders a procedurally generated blob model from a
ring of cameras, so ground truth is exactly representable and oracle tests
can compare against the reference model itself.
"""

from __future__ import annotations

import math

import numpy as np

from .finetune import FinetuneConfig, MaskedAdam, scene_extent
from .loss import loss_and_grad
from .model import GaussianModel
from .render import render, render_backward
from .sh import C0
from .views import Camera, View, look_at_camera

BACKGROUND = (0.0, 0.0, 0.0)


def _reference_blobs(n_blobs: int, rng: np.random.Generator) -> GaussianModel:
    positions = rng.uniform(-1.0, 1.0, size=(n_blobs, 3))
    sh = np.zeros((n_blobs, 16, 3))
    sh[:, 0, :] = (rng.uniform(0.15, 0.95, size=(n_blobs, 3)) - 0.5) / C0
    sh[:, 1:4, :] = rng.uniform(-0.08, 0.08, size=(n_blobs, 3, 3))
    opacity = rng.uniform(0.5, 2.5, size=n_blobs)
    scale = np.log(rng.uniform(0.08, 0.22, size=(n_blobs, 3)))
    quat = rng.normal(size=(n_blobs, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    return GaussianModel(positions, sh, opacity, scale, quat)


def make_synthetic_scene(kind: str, n_views: int, resolution: int, seed,
                         n_blobs: int = 40):
    """Returns (views, reference model); targets are self-rendered."""
    if kind != "blobs":
        raise ValueError(f"unknown scene kind {kind!r}")
    if n_views < 1:
        raise ValueError("need at least one view")
    rng = np.random.default_rng(seed)
    reference = _reference_blobs(n_blobs, rng)
    views = []
    for i in range(n_views):
        angle = 2.0 * math.pi * i / n_views
        position = np.array([
            3.0 * math.cos(angle),
            3.0 * math.sin(angle),
            0.8 + 0.4 * math.sin(2.0 * angle),
        ])
        camera = look_at_camera(position, (0.0, 0.0, 0.0), resolution,
                                resolution, fov_deg=55.0)
        target = render(reference, camera, BACKGROUND)
        views.append(View(camera, np.clip(target, 0.0, 1.0)))
    return views, reference


def _common_volume_center(cameras: list[Camera]) -> np.ndarray:
    """Least-squares intersection of the cameras' optical axes."""
    lhs = np.zeros((3, 3))
    rhs = np.zeros(3)
    for cam in cameras:
        forward = cam.rotation[2]
        center = cam.center
        proj = np.eye(3) - np.outer(forward, forward)
        lhs += proj
        rhs += proj @ center
    if np.linalg.cond(lhs) > 1e8:
        raise ValueError("degenerate camera set: optical axes do not "
                         "constrain a common viewing volume")
    return np.linalg.solve(lhs, rhs)


def _in_frustum(points: np.ndarray, cam: Camera) -> np.ndarray:
    t = cam.world_to_cam(points)
    ok = t[:, 2] > 0.1
    u = cam.fx * t[:, 0] / np.where(ok, t[:, 2], 1.0) + cam.cx
    v = cam.fy * t[:, 1] / np.where(ok, t[:, 2], 1.0) + cam.cy
    return ok & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)


def fit(views: list[View], n_gaussians: int, iterations: int, seed,
        ssim_weight: float = 0.2, lr_scale: float = 1.0,
        background=BACKGROUND) -> GaussianModel:
    """Fixed-count gradient-descent fit of a fresh model to the views."""
    if not views:
        raise ValueError("need at least one view")
    if n_gaussians < 1:
        raise ValueError("need at least one Gaussian")
    rng = np.random.default_rng(seed)
    cameras = [v.camera for v in views]
    center = _common_volume_center(cameras)
    extent = scene_extent(views)
    radius = 0.4 * float(np.mean([np.linalg.norm(cam.center - center)
                                  for cam in cameras]))

    positions = np.zeros((n_gaussians, 3))
    filled = 0
    for _ in range(1000):
        if filled == n_gaussians:
            break
        cand = center + rng.uniform(-radius, radius, size=(n_gaussians, 3))
        keep = np.ones(len(cand), dtype=bool)
        for cam in cameras:
            keep &= _in_frustum(cand, cam)
        cand = cand[keep][:n_gaussians - filled]
        positions[filled:filled + len(cand)] = cand
        filled += len(cand)
    if filled < n_gaussians:  # pathological frusta: fall back to the raw ball
        positions[filled:] = center + rng.uniform(
            -radius, radius, size=(n_gaussians - filled, 3))

    sh = np.zeros((n_gaussians, 16, 3))
    sh[:, 0, :] = (rng.uniform(0.0, 1.0, size=(n_gaussians, 3)) - 0.5) / C0
    opacity = np.full(n_gaussians, math.log(0.1 / 0.9))
    scale = np.full((n_gaussians, 3), math.log(0.02 * extent))
    quat = np.zeros((n_gaussians, 4))
    quat[:, 0] = 1.0
    model = GaussianModel(positions, sh, opacity, scale, quat)

    cfg = FinetuneConfig()
    opt_pos = MaskedAdam((n_gaussians, 3))
    opt_dc = MaskedAdam((n_gaussians, 1, 3))
    opt_rest = MaskedAdam((n_gaussians, 15, 3))
    opt_opa = MaskedAdam((n_gaussians,))
    opt_scale = MaskedAdam((n_gaussians, 3))
    opt_rot = MaskedAdam((n_gaussians, 4))
    rows = np.arange(n_gaussians)
    lr_pos_init = cfg.lr_position * extent * lr_scale
    lr_pos_final = cfg.lr_position_final * extent * lr_scale

    for it in range(iterations):
        view = views[int(rng.integers(len(views)))]
        image = render(model, view.camera, background)
        _, d_image = loss_and_grad(image, view.target, ssim_weight)
        grads = render_backward(model, view.camera, d_image, background)
        frac = it / iterations
        lr_pos = lr_pos_init * (lr_pos_final / lr_pos_init) ** frac
        opt_pos.step(model.positions, grads.d_positions, rows, lr_pos)
        opt_dc.step(model.sh_coeffs[:, :1, :], grads.d_sh[:, :1, :], rows,
                    cfg.lr_sh_dc * lr_scale)
        opt_rest.step(model.sh_coeffs[:, 1:, :], grads.d_sh[:, 1:, :], rows,
                      cfg.lr_sh_rest * lr_scale)
        opt_opa.step(model.opacity_logit, grads.d_opacity_logit, rows,
                     cfg.lr_opacity * lr_scale)
        opt_scale.step(model.scale_log, grads.d_scale_log, rows,
                       cfg.lr_scale * lr_scale)
        opt_rot.step(model.rotation, grads.d_rotation, rows,
                     cfg.lr_rotation * lr_scale)
    model.validate()
    return model
