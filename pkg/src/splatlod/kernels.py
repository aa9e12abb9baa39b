"""Sequential rasterization kernels for the CPU splat renderer.

Both kernels walk Gaussians in globally depth-sorted order and maintain
per-pixel compositing state, which is equivalent to per-pixel front-to-back
traversal. The backward kernel replays the forward termination point exactly
via the per-pixel index of the last contributor.

Constants must match between forward and backward: alpha cutoff 1/255,
alpha clamp 0.99, transmittance floor 1e-4.
"""

from __future__ import annotations

import numba
import numpy as np

ALPHA_CUTOFF = 1.0 / 255.0
ALPHA_MAX = 0.99
T_FLOOR = 1e-4


@numba.njit(cache=True)
def forward_kernel(means, conics, colors, opacities, bboxes, background, height, width):
    """Composites depth-sorted Gaussians; returns (image, T_final, last_contrib).

    means (K, 2) pixel coords, conics (K, 3) packed symmetric inverse
    covariance (a, b, c), colors (K, 3), opacities (K,) effective opacity in
    (0, 1], bboxes (K, 4) inclusive pixel ranges (r0, r1, c0, c1).
    last_contrib[p] is the sorted index of the last composited Gaussian at
    pixel p, or -1.
    """
    image = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    done = np.zeros((height, width), dtype=np.bool_)
    last = np.full((height, width), -1, dtype=np.int64)
    k_count = means.shape[0]
    for k in range(k_count):
        mu = means[k]
        ca, cb, cc = conics[k, 0], conics[k, 1], conics[k, 2]
        opa = opacities[k]
        r0, r1, c0, c1 = bboxes[k, 0], bboxes[k, 1], bboxes[k, 2], bboxes[k, 3]
        for r in range(r0, r1 + 1):
            dy = (r + 0.5) - mu[1]
            for c in range(c0, c1 + 1):
                if done[r, c]:
                    continue
                dx = (c + 0.5) - mu[0]
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if q < 0.0:
                    continue
                alpha = opa * np.exp(-0.5 * q)
                if alpha > ALPHA_MAX:
                    alpha = ALPHA_MAX
                if alpha < ALPHA_CUTOFF:
                    continue
                t_next = trans[r, c] * (1.0 - alpha)
                if t_next < T_FLOOR:
                    done[r, c] = True
                    continue
                t_cur = trans[r, c]
                image[r, c, 0] += colors[k, 0] * alpha * t_cur
                image[r, c, 1] += colors[k, 1] * alpha * t_cur
                image[r, c, 2] += colors[k, 2] * alpha * t_cur
                trans[r, c] = t_next
                last[r, c] = k
    for r in range(height):
        for c in range(width):
            t_cur = trans[r, c]
            image[r, c, 0] += background[0] * t_cur
            image[r, c, 1] += background[1] * t_cur
            image[r, c, 2] += background[2] * t_cur
    return image, trans, last


@numba.njit(cache=True)
def backward_kernel(means, conics, colors, opacities, bboxes, background,
                    d_image, trans_final, last):
    """Adjoint of forward_kernel with respect to the per-Gaussian screen
    quantities; returns (d_means, d_conics, d_colors, d_opacities).

    Walks Gaussians in reverse depth order, reconstructing the transmittance
    in front of each contributor and the composited radiance behind it.
    Clamped alphas pass zero gradient along the opacity/shape path.
    """
    k_count = means.shape[0]
    height, width = trans_final.shape
    d_means = np.zeros((k_count, 2))
    d_conics = np.zeros((k_count, 3))
    d_colors = np.zeros((k_count, 3))
    d_opacities = np.zeros(k_count)
    t_run = trans_final.copy()
    s_run = np.empty((height, width, 3))
    for r in range(height):
        for c in range(width):
            t_cur = trans_final[r, c]
            s_run[r, c, 0] = background[0] * t_cur
            s_run[r, c, 1] = background[1] * t_cur
            s_run[r, c, 2] = background[2] * t_cur
    for k in range(k_count - 1, -1, -1):
        mu = means[k]
        ca, cb, cc = conics[k, 0], conics[k, 1], conics[k, 2]
        opa = opacities[k]
        r0, r1, c0, c1 = bboxes[k, 0], bboxes[k, 1], bboxes[k, 2], bboxes[k, 3]
        for r in range(r0, r1 + 1):
            dy = (r + 0.5) - mu[1]
            for c in range(c0, c1 + 1):
                if last[r, c] < k:
                    continue
                dx = (c + 0.5) - mu[0]
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if q < 0.0:
                    continue
                g_val = np.exp(-0.5 * q)
                alpha_raw = opa * g_val
                alpha = alpha_raw
                if alpha > ALPHA_MAX:
                    alpha = ALPHA_MAX
                if alpha < ALPHA_CUTOFF:
                    continue
                one_m = 1.0 - alpha
                t_i = t_run[r, c] / one_m
                d_alpha = 0.0
                for ch in range(3):
                    d_ch = d_image[r, c, ch]
                    d_colors[k, ch] += d_ch * alpha * t_i
                    d_alpha += d_ch * (colors[k, ch] * t_i - s_run[r, c, ch] / one_m)
                for ch in range(3):
                    s_run[r, c, ch] += colors[k, ch] * alpha * t_i
                t_run[r, c] = t_i
                if alpha_raw <= ALPHA_MAX:
                    d_opacities[k] += d_alpha * g_val
                    d_q = d_alpha * alpha_raw * (-0.5)
                    d_conics[k, 0] += d_q * dx * dx
                    d_conics[k, 1] += d_q * 2.0 * dx * dy
                    d_conics[k, 2] += d_q * dy * dy
                    d_means[k, 0] += d_q * (-2.0) * (ca * dx + cb * dy)
                    d_means[k, 1] += d_q * (-2.0) * (cb * dx + cc * dy)
    return d_means, d_conics, d_colors, d_opacities
