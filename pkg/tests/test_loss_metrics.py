import numpy as np
import pytest

from splatlod.loss import loss_and_grad
from splatlod.metrics import (
    CSV_HEADER,
    LevelReport,
    psnr,
    reports_to_csv,
    ssim,
    ssim_with_grad,
)


def naive_ssim(a, b):
    """Windowed SSIM oracle: explicit loops over valid 11x11 windows."""
    win = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5 ** 2))
    win = win / win.sum()
    w2d = np.outer(win, win)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = a.shape[:2]
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        for r in range(h - 10):
            for c in range(w - 10):
                px = x[r:r + 11, c:c + 11]
                py = y[r:r + 11, c:c + 11]
                mx, my = (w2d * px).sum(), (w2d * py).sum()
                vx = (w2d * px * px).sum() - mx * mx
                vy = (w2d * py * py).sum() - my * my
                cxy = (w2d * px * py).sum() - mx * my
                vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_psnr_known_values():
    a = np.zeros((4, 4, 3))
    b = np.full((4, 4, 3), 0.5)
    # MSE 0.25 on a unit peak
    assert psnr(a, b) == pytest.approx(10 * np.log10(1 / 0.25))
    assert psnr(a, b) == pytest.approx(6.0206, abs=1e-4)
    assert psnr(a, a) == np.inf


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identity_is_one():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (16, 18, 3))
    assert ssim(img, img) == pytest.approx(1.0)


def test_ssim_matches_naive_oracle():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (14, 17, 3))
    b = np.clip(a + rng.normal(scale=0.15, size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-10)


def test_ssim_anticorrelated_checkerboard():
    r = np.indices((16, 16)).sum(axis=0) % 2
    a = np.repeat(r.astype(float)[:, :, None], 3, axis=2)
    b = 1.0 - a
    assert ssim(a, b) < 0.0


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_ssim_grad_finite_difference():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.2, 0.8, (13, 12, 3))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    val, grad = ssim_with_grad(a, b)
    assert val == pytest.approx(ssim(a, b), abs=1e-12)
    eps = 1e-6
    idx = [(0, 0, 0), (6, 5, 1), (12, 11, 2), (3, 8, 0), (9, 2, 2)]
    for r, c, ch in idx:
        ap = a.copy()
        am = a.copy()
        ap[r, c, ch] += eps
        am[r, c, ch] -= eps
        fd = (ssim(ap, b) - ssim(am, b)) / (2 * eps)
        assert grad[r, c, ch] == pytest.approx(fd, abs=1e-7)


def test_loss_pure_l1():
    a = np.zeros((4, 5, 3))
    b = np.full((4, 5, 3), 0.25)
    loss, grad = loss_and_grad(a, b, ssim_weight=0.0)
    assert loss == pytest.approx(0.25)
    # d/da mean|a - b| = sign(a - b) / size
    np.testing.assert_allclose(grad, -np.ones_like(a) / a.size, atol=1e-15)


def test_loss_zero_at_match():
    img = np.random.default_rng(3).uniform(0, 1, (16, 16, 3))
    loss, _ = loss_and_grad(img, img, ssim_weight=0.2)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_loss_grad_finite_difference_mixed():
    rng = np.random.default_rng(4)
    a = rng.uniform(0.2, 0.8, (16, 16, 3))
    b = rng.uniform(0.2, 0.8, (16, 16, 3))
    loss, grad = loss_and_grad(a, b, ssim_weight=0.2)
    eps = 1e-6
    for r, c, ch in [(0, 0, 0), (8, 7, 1), (15, 15, 2), (4, 11, 0)]:
        ap = a.copy()
        am = a.copy()
        ap[r, c, ch] += eps
        am[r, c, ch] -= eps
        lp, _ = loss_and_grad(ap, b, ssim_weight=0.2)
        lm, _ = loss_and_grad(am, b, ssim_weight=0.2)
        assert grad[r, c, ch] == pytest.approx((lp - lm) / (2 * eps), abs=1e-6)


def test_loss_rejects_small_image_with_ssim():
    small = np.zeros((8, 8, 3))
    with pytest.raises(ValueError):
        loss_and_grad(small, small, ssim_weight=0.2)
    # pure L1 has no window constraint
    loss, _ = loss_and_grad(small, small, ssim_weight=0.0)
    assert loss == 0.0


def test_loss_rejects_nonfinite():
    a = np.zeros((16, 16, 3))
    b = a.copy()
    b[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        loss_and_grad(a, b)


def test_reports_csv_schema():
    reports = [
        LevelReport(level=0, gaussian_count=10, size_bytes=123,
                    psnr_db=20.0, ssim=0.5, render_ms_mean=1.5),
        LevelReport(level=1, gaussian_count=20, size_bytes=456,
                    psnr_db=25.0, ssim=0.75, render_ms_mean=2.5),
    ]
    text = reports_to_csv(reports)
    lines = text.strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) == 3
    assert lines[1].startswith("0,10,123,")
