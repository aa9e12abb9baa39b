"""Progressive level-of-detail representation and codec for explicit
Gaussian-splat scenes."""

from .codec import GodeFormatError, GodeStream, decode, encode, read_gode, truncate, write_gode
from .finetune import FinetuneConfig, finetune
from .hierarchy import (
    Hierarchy,
    LevelProgression,
    accumulate_scores,
    build_hierarchy,
    compute_progression,
    load_hierarchy,
    save_hierarchy,
)
from .loss import loss_and_grad
from .metrics import LevelReport, evaluate_levels, psnr, reports_to_csv, ssim
from .model import GaussianModel, empty_model, subset
from .ply import load_ply, save_ply
from .quant import QuantParams, QuantizationSpec, compute_quant_params, quantize_model
from .render import render, render_backward, render_transition
from .scenefit import fit, make_synthetic_scene
from .views import Camera, View, load_views, look_at_camera, save_views

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "FinetuneConfig",
    "GaussianModel",
    "GodeFormatError",
    "GodeStream",
    "Hierarchy",
    "LevelProgression",
    "LevelReport",
    "QuantParams",
    "QuantizationSpec",
    "View",
    "accumulate_scores",
    "build_hierarchy",
    "compute_progression",
    "compute_quant_params",
    "decode",
    "encode",
    "empty_model",
    "evaluate_levels",
    "finetune",
    "fit",
    "load_hierarchy",
    "load_ply",
    "load_views",
    "look_at_camera",
    "loss_and_grad",
    "make_synthetic_scene",
    "psnr",
    "quantize_model",
    "read_gode",
    "render",
    "render_backward",
    "render_transition",
    "reports_to_csv",
    "save_hierarchy",
    "save_ply",
    "save_views",
    "ssim",
    "subset",
    "truncate",
    "write_gode",
]
