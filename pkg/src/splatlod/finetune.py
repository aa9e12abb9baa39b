"""Quantization-aware fine-tuning over randomly sampled detail levels.

Each iteration samples a level and a view, fake-quantizes the active
Gaussians' attributes with ranges frozen before training, renders, adds an
L1 penalty on the SH coefficients, and applies straight-through gradients
through a masked Adam update that only touches the active rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .hierarchy import Hierarchy, LevelProgression, guarded_floor
from .loss import loss_and_grad
from .model import GaussianModel, subset
from .optim import MaskedAdam
from .quant import QuantizationSpec, QuantParams, compute_quant_params, quantize_model
from .render import render, render_backward
from .views import View

SAMPLING_KINDS = ("uniform", "weighted")


@dataclass
class FinetuneConfig:
    iterations: int = 30000
    sh_l1_weight: float = 1e-2
    l1_include_dc: bool = True
    l1_mean_normalized: bool = False
    ssim_weight: float = 0.2
    sampling: str = "uniform"
    sampling_g: float = 0.0      # denominator G of the weighted-sampling law
    seed: int = 0
    # Learning rates from the reference splatting release; the position rate
    # is multiplied by the scene extent and decays exponentially to its
    # final value over the run.
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 2.5e-3 / 20.0
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.sh_l1_weight < 0:
            raise ValueError("sh_l1_weight must be >= 0")
        if self.sampling not in SAMPLING_KINDS:
            raise ValueError(f"unknown sampling kind {self.sampling!r}")
        if self.sampling == "weighted" and self.sampling_g <= 0:
            raise ValueError("weighted sampling needs a positive G")

    @classmethod
    def from_file(cls, path) -> "FinetuneConfig":
        """Flat key=value file; unknown keys are an error, '#' comments ok."""
        kwargs = {}
        valid = {f.name: f.type for f in fields(cls)}
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in valid:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                if key in ("iterations", "seed"):
                    kwargs[key] = int(value)
                elif key == "sampling":
                    kwargs[key] = value
                elif key in ("l1_include_dc", "l1_mean_normalized"):
                    kwargs[key] = value.lower() in ("1", "true", "yes")
                else:
                    kwargs[key] = float(value)
        return cls(**kwargs)


def level_probabilities(progression: LevelProgression, g: float) -> np.ndarray:
    """Weighted level-sampling distribution: weights floor(c_min * b'^l)
    with the progression exponent recomputed over denominator g."""
    if g <= 0:
        raise ValueError("weighted sampling needs a positive G")
    step = (math.log(progression.c_max) - math.log(progression.c_min)) / g
    weights = np.array([
        guarded_floor(progression.c_min * math.exp(l * step))
        for l in range(progression.levels)
    ], dtype=np.float64)
    return weights / weights.sum()


def sample_level(levels: int, strategy: str, rng: np.random.Generator,
                 progression: LevelProgression | None = None,
                 g: float = 0.0) -> int:
    """Draw a level index; uniform needs no progression, weighted does."""
    if levels < 1:
        raise ValueError("need at least one level")
    if strategy == "uniform":
        return int(rng.integers(levels))
    if strategy == "weighted":
        if progression is None:
            raise ValueError("weighted sampling needs the level progression")
        probs = level_probabilities(progression, g)
        return int(rng.choice(levels, p=probs))
    raise ValueError(f"unknown sampling strategy {strategy!r}")


def scene_extent(views: list[View]) -> float:
    """Radius of the camera-center bounding sphere (about the centroid)."""
    centers = np.stack([v.camera.center for v in views])
    centroid = centers.mean(axis=0)
    radius = float(np.linalg.norm(centers - centroid, axis=1).max())
    return max(radius, 1e-3)


class _LogWriter:
    def __init__(self, path):
        self.fh = open(path, "w") if path else None
        if self.fh:
            self.fh.write("iteration,level,loss\n")

    def write(self, iteration: int, level: int, loss: float):
        if self.fh:
            self.fh.write(f"{iteration},{level},{loss:.8g}\n")

    def close(self):
        if self.fh:
            self.fh.close()


def finetune(model: GaussianModel, hierarchy: Hierarchy, views: list[View],
             spec: QuantizationSpec, cfg: FinetuneConfig,
             params: QuantParams | None = None,
             background=(0.0, 0.0, 0.0), log_path=None) -> GaussianModel:
    """Returns a fine-tuned copy of the model; layer membership is fixed.

    Quantization ranges are frozen from the input model (or passed in) so
    training and the later encode see identical values.
    """
    if hierarchy.source_count != model.n:
        raise ValueError(
            f"hierarchy built for {hierarchy.source_count} Gaussians, "
            f"model has {model.n}")
    if not views:
        raise ValueError("need at least one view")
    if params is None:
        params = compute_quant_params(model, hierarchy, spec)

    out = model.copy()
    rng = np.random.default_rng(cfg.seed)
    extent = scene_extent(views)
    prog = hierarchy.progression
    active_by_level = [hierarchy.active_indices(l) for l in range(prog.levels)]

    opt_pos = MaskedAdam((model.n, 3))
    opt_dc = MaskedAdam((model.n, 1, 3))
    opt_rest = MaskedAdam((model.n, 15, 3))
    opt_opa = MaskedAdam((model.n,))
    opt_scale = MaskedAdam((model.n, 3))
    opt_rot = MaskedAdam((model.n, 4))

    lr_pos_init = cfg.lr_position * extent
    lr_pos_final = cfg.lr_position_final * extent
    log = _LogWriter(log_path)
    try:
        for it in range(cfg.iterations):
            level = sample_level(prog.levels, cfg.sampling, rng, prog, cfg.sampling_g)
            view = views[int(rng.integers(len(views)))]
            rows = active_by_level[level]
            sub = subset(out, rows)
            q_sub = quantize_model(sub, spec, params)

            image = render(q_sub, view.camera, background)
            loss, d_image = loss_and_grad(image, view.target, cfg.ssim_weight)
            grads = render_backward(q_sub, view.camera, d_image, background)

            # L1 sparsity on the SH coefficients; straight-through, so the
            # subgradient acts on the raw (unquantized) values.
            raw_sh = sub.sh_coeffs
            l1_slice = slice(None) if cfg.l1_include_dc else slice(1, None)
            weight = cfg.sh_l1_weight
            if cfg.l1_mean_normalized and rows.size:
                weight = weight / rows.size
            loss += weight * float(np.abs(raw_sh[:, l1_slice, :]).sum())
            d_sh = grads.d_sh
            d_sh[:, l1_slice, :] += weight * np.sign(raw_sh[:, l1_slice, :])

            frac = it / cfg.iterations
            lr_pos = lr_pos_init * (lr_pos_final / lr_pos_init) ** frac
            opt_pos.step(out.positions, grads.d_positions, rows, lr_pos)
            opt_dc.step(out.sh_coeffs[:, :1, :], d_sh[:, :1, :], rows, cfg.lr_sh_dc)
            opt_rest.step(out.sh_coeffs[:, 1:, :], d_sh[:, 1:, :], rows, cfg.lr_sh_rest)
            opt_opa.step(out.opacity_logit, grads.d_opacity_logit, rows, cfg.lr_opacity)
            opt_scale.step(out.scale_log, grads.d_scale_log, rows, cfg.lr_scale)
            opt_rot.step(out.rotation, grads.d_rotation, rows, cfg.lr_rotation)
            log.write(it, level, loss)
    finally:
        log.close()
    out.validate()
    return out
