import numpy as np
import pytest

from splatlod.finetune import (
    FinetuneConfig,
    finetune,
    level_probabilities,
    sample_level,
    scene_extent,
)
from splatlod.hierarchy import build_hierarchy, compute_progression
from splatlod.loss import loss_and_grad
from splatlod.model import subset
from splatlod.optim import MaskedAdam
from splatlod.quant import QuantizationSpec, compute_quant_params, quantize_model
from splatlod.render import render
from splatlod.views import View

from conftest import random_model, ring_cameras


class ReferenceAdam:
    """Per-row bias correction, plain loops; the oracle for MaskedAdam."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-15):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = np.zeros(shape[0], dtype=int)
        self.b1, self.b2, self.eps = beta1, beta2, eps

    def step(self, param, grad_rows, rows, lr):
        for j, r in enumerate(rows):
            self.t[r] += 1
            g = grad_rows[j]
            self.m[r] = self.b1 * self.m[r] + (1 - self.b1) * g
            self.v[r] = self.b2 * self.v[r] + (1 - self.b2) * g * g
            mh = self.m[r] / (1 - self.b1 ** self.t[r])
            vh = self.v[r] / (1 - self.b2 ** self.t[r])
            param[r] = param[r] - lr * mh / (np.sqrt(vh) + self.eps)


def test_masked_adam_matches_reference():
    rng = np.random.default_rng(0)
    shape = (5, 3)
    p1 = rng.normal(size=shape)
    p2 = p1.copy()
    opt = MaskedAdam(shape)
    ref = ReferenceAdam(shape)
    schedules = [
        (np.array([0, 1, 2]), 1e-2),
        (np.array([1, 3]), 5e-3),
        (np.array([0, 1, 2, 3, 4]), 1e-2),
        (np.array([4]), 2e-2),
    ]
    for rows, lr in schedules:
        g = rng.normal(size=(rows.size,) + shape[1:])
        opt.step(p1, g, rows, lr)
        ref.step(p2, g, rows, lr)
    np.testing.assert_allclose(p1, p2, atol=1e-14)


def test_masked_adam_leaves_inactive_rows():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(6, 4))
    before = p.copy()
    opt = MaskedAdam((6, 4))
    for _ in range(5):
        rows = np.array([0, 2, 4])
        opt.step(p, rng.normal(size=(3, 4)), rows, 1e-2)
    np.testing.assert_array_equal(p[[1, 3, 5]], before[[1, 3, 5]])
    assert not np.array_equal(p[[0, 2, 4]], before[[0, 2, 4]])


def test_masked_adam_first_step_is_signed_lr():
    # with eps tiny, the first update is lr * sign(grad)
    p = np.zeros((2, 2))
    opt = MaskedAdam((2, 2))
    g = np.array([[3.0, -0.25], [1e-3, -40.0]])
    opt.step(p, g, np.array([0, 1]), 0.01)
    np.testing.assert_allclose(p, -0.01 * np.sign(g), rtol=1e-10)


def test_masked_adam_updates_through_views():
    # sh optimizer updates a sliced view of the coefficient tensor
    base = np.zeros((3, 4, 2))
    view = base[:, :1, :]
    opt = MaskedAdam((3, 1, 2))
    opt.step(view, np.ones((2, 1, 2)), np.array([0, 2]), 0.1)
    assert base[0, 0, 0] != 0.0 and base[2, 0, 1] != 0.0
    assert np.all(base[:, 1:, :] == 0.0)


def scene_for_finetune(n=24, n_views=3, seed=7):
    model = random_model(seed, n)
    rng = np.random.default_rng(seed + 1)
    truth = model.copy()
    truth.positions += rng.normal(scale=0.02, size=truth.positions.shape)
    truth.sh_coeffs += rng.normal(scale=0.04, size=truth.sh_coeffs.shape)
    views = [View(camera=cam, target=render(truth, cam, (0, 0, 0)))
             for cam in ring_cameras(n_views, 3.0, 32, 32)]
    return model, views


def test_finetune_zero_iterations_is_identity():
    model, views = scene_for_finetune()
    prog = compute_progression(6, 18, 3)
    h = build_hierarchy(model, views, prog, score="opacity")
    cfg = FinetuneConfig(iterations=0, ssim_weight=0.0)
    out = finetune(model, h, views, QuantizationSpec(), cfg)
    assert out.allclose(model, atol=0)
    assert out is not model


def test_finetune_rejects_mismatched_hierarchy():
    model, views = scene_for_finetune()
    prog = compute_progression(6, 18, 3)
    h = build_hierarchy(model, views, prog, score="opacity")
    other = random_model(9, 30)
    with pytest.raises(ValueError):
        finetune(other, h, views, QuantizationSpec(),
                 FinetuneConfig(iterations=1))


def test_finetune_never_touches_dropped_gaussians():
    model, views = scene_for_finetune(n=24)
    prog = compute_progression(6, 18, 3)   # 6 of 24 are in no layer
    h = build_hierarchy(model, views, prog, score="opacity")
    in_layers = set(np.concatenate([h.base] + list(h.enhancements)))
    dropped = sorted(set(range(24)) - in_layers)
    assert dropped
    cfg = FinetuneConfig(iterations=12, ssim_weight=0.0, seed=3)
    out = finetune(model, h, views, QuantizationSpec(), cfg)
    np.testing.assert_array_equal(out.positions[dropped], model.positions[dropped])
    np.testing.assert_array_equal(out.sh_coeffs[dropped], model.sh_coeffs[dropped])
    np.testing.assert_array_equal(out.opacity_logit[dropped],
                                  model.opacity_logit[dropped])
    # and something active did move
    assert not np.array_equal(out.positions[list(in_layers)],
                              model.positions[list(in_layers)])


def test_finetune_deterministic():
    model, views = scene_for_finetune()
    prog = compute_progression(6, 18, 3)
    h = build_hierarchy(model, views, prog, score="opacity")
    cfg = FinetuneConfig(iterations=8, ssim_weight=0.0, seed=11)
    a = finetune(model, h, views, QuantizationSpec(), cfg)
    b = finetune(model, h, views, QuantizationSpec(), cfg)
    assert a.allclose(b, atol=0)


def test_finetune_single_gaussian_descent():
    """One step reduces the rendering loss of a slightly-off model."""
    truth = random_model(15, 1)
    truth.positions[:] = [[0.0, 0.0, 0.0]]
    truth.opacity_logit[:] = 1.5
    model = truth.copy()
    model.sh_coeffs[0, 0] += 0.35
    cam = ring_cameras(1, 3.0, 24, 24)[0]
    views = [View(camera=cam, target=render(truth, cam, (0, 0, 0)))]
    prog = compute_progression(1, 1, 2)
    h = build_hierarchy(model, views, prog, score="opacity")
    spec = QuantizationSpec()
    params = compute_quant_params(model, h, spec)

    def current_loss(m):
        img = render(quantize_model(m, spec, params), cam, (0, 0, 0))
        return loss_and_grad(img, views[0].target, 0.0)[0]

    cfg = FinetuneConfig(iterations=1, sh_l1_weight=0.0, ssim_weight=0.0, seed=0)
    out = finetune(model, h, views, spec, cfg, params=params)
    assert current_loss(out) < current_loss(model)


def test_finetune_l1_shrinks_coefficients():
    """Zero-residual target: the only force on SH is the L1 penalty, so one
    step moves every nonzero coefficient toward zero."""
    model = random_model(16, 4)
    cam = ring_cameras(1, 3.0, 24, 24)[0]
    prog = compute_progression(4, 4, 2)
    h = build_hierarchy(model, [], prog, score="opacity")
    spec = QuantizationSpec()
    params = compute_quant_params(model, h, spec)
    target = render(quantize_model(model, spec, params), cam, (0, 0, 0))
    views = [View(camera=cam, target=target)]
    cfg = FinetuneConfig(iterations=1, sh_l1_weight=1e-2, ssim_weight=0.0, seed=0)
    out = finetune(model, h, views, spec, cfg, params=params)
    rest_before = np.abs(model.sh_coeffs[:, 1:, :])
    rest_after = np.abs(out.sh_coeffs[:, 1:, :])
    moved = rest_before > 1e-3   # clear of the step size
    assert np.all(rest_after[moved] < rest_before[moved])
    assert np.abs(out.sh_coeffs).sum() < np.abs(model.sh_coeffs).sum()


def test_finetune_writes_log(tmp_path):
    model, views = scene_for_finetune()
    prog = compute_progression(6, 18, 3)
    h = build_hierarchy(model, views, prog, score="opacity")
    log = tmp_path / "progress.csv"
    cfg = FinetuneConfig(iterations=5, ssim_weight=0.0, seed=2)
    finetune(model, h, views, QuantizationSpec(), cfg, log_path=log)
    lines = log.read_text().strip().split("\n")
    assert lines[0] == "iteration,level,loss"
    assert len(lines) == 6
    for i, line in enumerate(lines[1:]):
        it, level, loss = line.split(",")
        assert int(it) == i
        assert 0 <= int(level) < 3
        assert float(loss) >= 0


def test_config_from_file(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text(
        "# training config\n"
        "iterations = 123\n"
        "sh_l1_weight = 0.5\n"
        "sampling = weighted\n"
        "sampling_g = 2.5\n"
        "seed = 9\n"
    )
    cfg = FinetuneConfig.from_file(path)
    assert cfg.iterations == 123
    assert cfg.sh_l1_weight == 0.5
    assert cfg.sampling == "weighted"
    assert cfg.sampling_g == 2.5
    assert cfg.seed == 9
    assert cfg.lr_opacity == 0.05  # untouched default


def test_config_from_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("iterations = 5\nwarp_speed = 9\n")
    with pytest.raises(ValueError, match="warp_speed"):
        FinetuneConfig.from_file(path)


def test_config_validation():
    with pytest.raises(ValueError):
        FinetuneConfig(iterations=-1)
    with pytest.raises(ValueError):
        FinetuneConfig(sh_l1_weight=-0.5)
    with pytest.raises(ValueError):
        FinetuneConfig(sampling="sometimes")


def test_uniform_sampling_frequencies():
    rng = np.random.default_rng(0)
    levels = 8
    draws = 100_000
    counts = np.zeros(levels)
    for _ in range(draws):
        counts[sample_level(levels, "uniform", rng)] += 1
    np.testing.assert_allclose(counts / draws, 1 / levels, atol=0.01)


def test_single_level_always_zero():
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert sample_level(1, "uniform", rng) == 0


def test_weighted_probabilities_power_of_two():
    prog = compute_progression(100, 800, 4)
    probs = level_probabilities(prog, g=3.0)
    np.testing.assert_allclose(probs, np.array([1, 2, 4, 8]) / 15.0)


def test_weighted_probabilities_non_decreasing():
    prog = compute_progression(50, 5000, 6)
    for g in (1.0, 2.5, 5.0, 10.0):
        probs = level_probabilities(prog, g)
        assert probs.sum() == pytest.approx(1.0)
        assert np.all(np.diff(probs) >= -1e-15)


def test_weighted_sampling_matches_probabilities():
    rng = np.random.default_rng(2)
    prog = compute_progression(100, 800, 4)
    draws = 40_000
    counts = np.zeros(4)
    for _ in range(draws):
        counts[sample_level(4, "weighted", rng, prog, g=3.0)] += 1
    np.testing.assert_allclose(counts / draws, np.array([1, 2, 4, 8]) / 15.0,
                               atol=0.015)


def test_scene_extent_ring():
    cams = ring_cameras(6, 3.0, 16, 16)
    centers = np.stack([c.center for c in cams])
    centroid = centers.mean(axis=0)
    want = np.linalg.norm(centers - centroid, axis=1).max()
    assert scene_extent([View(camera=c, target=np.zeros((16, 16, 3)))
                         for c in cams]) == pytest.approx(want)
