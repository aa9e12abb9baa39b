"""Training loss: weighted L1 + (1 - SSIM), with its image-space gradient.

loss = (1 - w) * mean|r - t| + w * (1 - SSIM(r, t)). Requesting w > 0 on
images smaller than the SSIM window is an error rather than a silent
fallback.
"""

from __future__ import annotations

import numpy as np

from .metrics import ssim_with_grad

DEFAULT_SSIM_WEIGHT = 0.2


def loss_and_grad(rendered: np.ndarray, target: np.ndarray,
                  ssim_weight: float = DEFAULT_SSIM_WEIGHT):
    """Returns (loss, d loss / d rendered)."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    if not (np.all(np.isfinite(rendered)) and np.all(np.isfinite(target))):
        raise ValueError("non-finite image values")
    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    d_image = (1.0 - ssim_weight) * np.sign(diff) / diff.size
    loss = (1.0 - ssim_weight) * l1
    if ssim_weight > 0.0:
        value, grad = ssim_with_grad(rendered, target)
        loss += ssim_weight * (1.0 - value)
        d_image -= ssim_weight * grad
    return loss, d_image
