"""Image-quality metrics and per-level stream evaluation.

SSIM uses the conventional 11x11 Gaussian window (sigma 1.5, C1 = 0.01^2,
C2 = 0.03^2), computed per channel on the valid (fully overlapping window)
region, then averaged. The analytic SSIM gradient feeds the training loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .render import render
from .views import View

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _window_1d() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    offsets = np.arange(SSIM_WINDOW) - half
    w = np.exp(-(offsets ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return w / w.sum()


_W1D = _window_1d()


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; inf when equal."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _windowed(x: np.ndarray) -> np.ndarray:
    """Exact windowed mean over fully-overlapping 11x11 neighborhoods."""
    full = correlate1d(correlate1d(x, _W1D, axis=0, mode="constant"),
                       _W1D, axis=1, mode="constant")
    half = SSIM_WINDOW // 2
    return full[half:x.shape[0] - half, half:x.shape[1] - half]


def _embed_corr(g: np.ndarray, shape) -> np.ndarray:
    """Adjoint of _windowed: scatter valid-grid values back through the
    (symmetric) window onto the full image grid."""
    half = SSIM_WINDOW // 2
    padded = np.zeros(shape)
    padded[half:half + g.shape[0], half:half + g.shape[1]] = g
    return correlate1d(correlate1d(padded, _W1D, axis=0, mode="constant"),
                       _W1D, axis=1, mode="constant")


def _ssim_channel(x: np.ndarray, y: np.ndarray, want_grad: bool):
    mu_x = _windowed(x)
    mu_y = _windowed(y)
    var_x = _windowed(x * x) - mu_x ** 2
    var_y = _windowed(y * y) - mu_y ** 2
    cov = _windowed(x * y) - mu_x * mu_y
    n1 = 2.0 * mu_x * mu_y + SSIM_C1
    n2 = 2.0 * cov + SSIM_C2
    d1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    d2 = var_x + var_y + SSIM_C2
    s_map = (n1 * n2) / (d1 * d2)
    value = float(s_map.mean())
    if not want_grad:
        return value, None
    # Partials of the local SSIM with respect to window statistics of x.
    d_mu = 2.0 * (mu_y * n2 * d1 - n1 * n2 * mu_x) / (d1 ** 2 * d2)
    d_var = -n1 * n2 / (d1 * d2 ** 2)
    d_cov = 2.0 * n1 / (d1 * d2)
    g_a = d_mu - 2.0 * mu_x * d_var - mu_y * d_cov
    count = s_map.size
    grad = (
        _embed_corr(g_a, x.shape)
        + 2.0 * x * _embed_corr(d_var, x.shape)
        + y * _embed_corr(d_cov, x.shape)
    ) / count
    return value, grad


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity of two (H, W, 3) images, channel-averaged."""
    value, _ = ssim_with_grad(a, b, want_grad=False)
    return value


def ssim_with_grad(a: np.ndarray, b: np.ndarray, want_grad: bool = True):
    """Returns (ssim, d ssim / d a); the gradient is with respect to the
    first image."""
    a, b = _check_pair(a, b)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) images, got {a.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape[0]}x{a.shape[1]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    total = 0.0
    grad = np.zeros_like(a) if want_grad else None
    for ch in range(3):
        value, g = _ssim_channel(a[:, :, ch], b[:, :, ch], want_grad)
        total += value
        if want_grad:
            grad[:, :, ch] = g
    if want_grad:
        return total / 3.0, grad / 3.0
    return total / 3.0, None


@dataclass
class LevelReport:
    level: int
    gaussian_count: int
    size_bytes: int
    psnr_db: float
    ssim: float
    render_ms_mean: float


CSV_HEADER = "level,W,size_bytes,psnr_db,ssim,render_ms"


def reports_to_csv(reports: list[LevelReport]) -> str:
    lines = [CSV_HEADER]
    for r in reports:
        lines.append(
            f"{r.level},{r.gaussian_count},{r.size_bytes},"
            f"{r.psnr_db:.6g},{r.ssim:.6g},{r.render_ms_mean:.6g}")
    return "\n".join(lines) + "\n"


def evaluate_levels(stream, views: list[View],
                    background=(0.0, 0.0, 0.0)) -> list[LevelReport]:
    """Decode every level, render all views, and report quality/size/time."""
    from . import codec  # local import: codec depends on sibling modules

    if not views:
        raise ValueError("need at least one view to evaluate")
    reports = []
    for level in range(stream.levels):
        model = codec.decode(stream, level)
        size = len(codec.truncate(stream, level))
        psnr_sum = 0.0
        ssim_sum = 0.0
        ms_sum = 0.0
        for view in views:
            start = time.perf_counter()
            image = render(model, view.camera, background)
            ms_sum += (time.perf_counter() - start) * 1e3
            psnr_sum += psnr(image, view.target)
            ssim_sum += ssim(image, view.target)
        count = len(views)
        reports.append(LevelReport(
            level=level,
            gaussian_count=model.n,
            size_bytes=size,
            psnr_db=psnr_sum / count,
            ssim=ssim_sum / count,
            render_ms_mean=ms_sum / count,
        ))
    return reports
