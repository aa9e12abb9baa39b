import numpy as np
import pytest

from splatlod.model import GaussianModel
from splatlod.sh import C0
from splatlod.views import Camera, View, look_at_camera


def random_model(seed: int, n: int, spread: float = 0.4) -> GaussianModel:
    """Valid random model near the origin with mid-range opacities."""
    rng = np.random.default_rng(seed)
    sh = np.zeros((n, 16, 3))
    sh[:, 0, :] = (rng.uniform(0.1, 0.9, (n, 3)) - 0.5) / C0
    sh[:, 1:, :] = rng.normal(size=(n, 15, 3)) * 0.05
    return GaussianModel(
        positions=rng.uniform(-spread, spread, (n, 3)),
        sh_coeffs=sh,
        opacity_logit=rng.uniform(-1.0, 2.5, n),
        scale_log=np.log(rng.uniform(0.05, 0.25, (n, 3))),
        rotation=rng.normal(size=(n, 4)),
    )


def smooth_scene(seed: int, n: int = 3):
    """Scene built so the rendering loss is locally smooth in every raw
    parameter: footprints cover the whole image (no cutoff or bounding-box
    crossings inside it), opacities stay below the clamp, transmittance
    stays above the termination floor, and colors stay inside the clamp.
    Used for finite-difference gradient checks."""
    rng = np.random.default_rng(seed)
    cam = look_at_camera(np.array([2.5, -2.2, 1.4]), (0, 0, 0), 16, 16, 60.0)
    n_g = n
    positions = rng.uniform(-0.3, 0.3, (n_g, 3))
    dist = np.linalg.norm(np.array([2.5, -2.2, 1.4]) - positions, axis=1)
    sig_px = rng.uniform(6.0, 9.0, (n_g, 3))
    scale_log = np.log(sig_px * dist[:, None] / cam.fx)
    o = rng.uniform(0.3, 0.85, n_g)
    sh = np.zeros((n_g, 16, 3))
    sh[:, 0, :] = (rng.uniform(0.35, 0.65, (n_g, 3)) - 0.5) / C0
    sh[:, 1:, :] = rng.normal(size=(n_g, 15, 3)) * 0.01
    model = GaussianModel(
        positions=positions, sh_coeffs=sh,
        opacity_logit=np.log(o / (1 - o)),
        scale_log=scale_log, rotation=rng.normal(size=(n_g, 4)),
    )
    weights = rng.normal(size=(16, 16, 3))
    return model, cam, weights


def ring_cameras(n_views: int, radius: float, width: int, height: int,
                 fov_deg: float = 55.0) -> list[Camera]:
    cams = []
    for i in range(n_views):
        theta = 2 * np.pi * i / n_views
        pos = np.array([radius * np.cos(theta), radius * np.sin(theta),
                        0.8 + 0.4 * np.sin(2 * theta)])
        cams.append(look_at_camera(pos, (0, 0, 0), width, height, fov_deg))
    return cams


@pytest.fixture(scope="session")
def small_scene():
    """Deterministic 24-Gaussian model with 3 posed 32x32 views, shared by
    hierarchy/finetune/codec tests. Targets are rendered from a perturbed
    copy so the loss gradient at `model` is non-zero."""
    from splatlod.render import render

    model = random_model(7, 24)
    rng = np.random.default_rng(8)
    truth = model.copy()
    truth.positions += rng.normal(scale=0.03, size=truth.positions.shape)
    truth.sh_coeffs += rng.normal(scale=0.05, size=truth.sh_coeffs.shape)
    truth.opacity_logit += rng.normal(scale=0.2, size=truth.opacity_logit.shape)
    views = []
    for cam in ring_cameras(3, 3.0, 32, 32):
        views.append(View(camera=cam, target=render(truth, cam, (0.0, 0.0, 0.0))))
    return model, views
