"""Quantizers: per-channel affine 8-bit, IEEE binary16, and the frozen
quantization image of a model.

Affine: x_q = clip(round(x / scale + zero_point), q_min, q_max) and
x_dq = scale * (x_q - zero_point), with scale = (x_max - x_min) / (q_max -
q_min) and zero_point = q_min - x_min / scale per channel. Degenerate
channels (x_min == x_max) use scale 1 so constants round-trip exactly.
Scale and zero point are stored at float32 precision because the codec
header carries them as f32; using the rounded values everywhere keeps
training, encoding, and decoding bit-consistent.

Both quantizers train under a straight-through estimator: their backward is
the identity, exposed explicitly as *_backward for callers that wire up the
chain rule by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GaussianModel, SH_CHANNELS

BIT_WIDTHS = (0, 8, 16)  # 0 means "not quantized"


@dataclass(frozen=True)
class QuantizationSpec:
    """Bit width per attribute; positions are never quantized (stored f32)."""
    sh_bits: int = 8
    opacity_bits: int = 16
    scale_bits: int = 16
    rotation_bits: int = 16

    def __post_init__(self):
        if self.sh_bits not in (0, 8):
            raise ValueError(f"sh bit width must be 0 or 8, got {self.sh_bits}")
        for name in ("opacity_bits", "scale_bits", "rotation_bits"):
            if getattr(self, name) not in (0, 16):
                raise ValueError(f"{name} must be 0 or 16, got {getattr(self, name)}")

    @property
    def position_bits(self) -> int:
        return 0


@dataclass
class QuantParams:
    """Affine parameters for the 8-bit channels (one scale/zero-point per
    scalar channel); SH channel c of coefficient k sits at index k*3 + c."""
    scale: np.ndarray       # (C,) positive, f32-exact values
    zero_point: np.ndarray  # (C,) f32-exact values
    q_min: int = 0
    q_max: int = 255

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        self.zero_point = np.asarray(self.zero_point, dtype=np.float64).reshape(-1)
        if self.scale.shape != self.zero_point.shape:
            raise ValueError("scale/zero_point length mismatch")
        if np.any(self.scale <= 0):
            raise ValueError("scales must be positive")

    @property
    def n_channels(self) -> int:
        return self.scale.shape[0]


def quant_params_from_range(x_min: np.ndarray, x_max: np.ndarray,
                            q_min: int = 0, q_max: int = 255) -> QuantParams:
    """Affine parameters covering [x_min, x_max] per channel."""
    x_min = np.asarray(x_min, dtype=np.float64).reshape(-1)
    x_max = np.asarray(x_max, dtype=np.float64).reshape(-1)
    if np.any(x_max < x_min):
        raise ValueError("x_max must be >= x_min")
    degenerate = x_max == x_min
    scale = np.where(degenerate, 1.0, (x_max - x_min) / (q_max - q_min))
    scale = scale.astype(np.float32).astype(np.float64)
    zero_point = q_min - x_min / scale
    zero_point = zero_point.astype(np.float32).astype(np.float64)
    return QuantParams(scale, zero_point, q_min, q_max)


def _channel_view(x: np.ndarray, params: QuantParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size % params.n_channels:
        raise ValueError(
            f"array of {x.size} values is not divisible into "
            f"{params.n_channels} channels")
    return x.reshape(-1, params.n_channels)


def affine_quantize(x: np.ndarray, params: QuantParams) -> np.ndarray:
    """Integer codes; trailing dimensions flatten to the channel axis."""
    flat = _channel_view(x, params)
    q = np.clip(np.rint(flat / params.scale + params.zero_point),
                params.q_min, params.q_max)
    dtype = np.uint8 if params.q_min >= 0 and params.q_max <= 255 else np.int64
    return q.astype(dtype).reshape(np.asarray(x).shape)


def affine_dequantize(q: np.ndarray, params: QuantParams) -> np.ndarray:
    flat = _channel_view(q, params)
    return (params.scale * (flat - params.zero_point)).reshape(np.asarray(q).shape)


def fake_quantize(x: np.ndarray, params: QuantParams) -> np.ndarray:
    """Quantize-then-dequantize so downstream code sees quantization error."""
    return affine_dequantize(affine_quantize(x, params), params)


def fake_quantize_backward(upstream: np.ndarray) -> np.ndarray:
    """Straight-through estimator: gradients ignore the rounding."""
    return upstream


def quantize_fp16(x: np.ndarray) -> np.ndarray:
    """Round-trip through IEEE binary16 (round-to-nearest-even)."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):  # overflow becomes a ValueError below
        out = x.astype(np.float16)
    if not np.all(np.isfinite(out[np.isfinite(x)])):
        raise ValueError("value overflows binary16 range")
    return out.astype(np.float64)


def quantize_fp16_backward(upstream: np.ndarray) -> np.ndarray:
    """Straight-through estimator for the binary16 round-trip."""
    return upstream


def compute_quant_params(model: GaussianModel, hierarchy,
                         spec: QuantizationSpec) -> QuantParams:
    """Frozen affine ranges over all Gaussians of the top level G_{L-1}.

    Computed once before fine-tuning and shared with the codec so the values
    seen in training match the encoded ones exactly.
    """
    if model.n == 0:
        raise ValueError("cannot derive quantization ranges from an empty model")
    if not np.all(np.isfinite(model.sh_coeffs)):
        raise ValueError("non-finite SH coefficients")
    if spec.sh_bits == 0:
        return QuantParams(np.ones(0), np.zeros(0))
    top = hierarchy.active_indices(hierarchy.levels - 1)
    flat = model.sh_coeffs[top].reshape(-1, SH_CHANNELS)
    return quant_params_from_range(flat.min(axis=0), flat.max(axis=0))


def quantize_model(model: GaussianModel, spec: QuantizationSpec,
                   params: QuantParams) -> GaussianModel:
    """The storage image of a model: exactly the values a decoder recovers.

    Positions pass through float32 (their container precision), SH through
    the affine 8-bit quantizer, and the remaining attributes through
    binary16, as selected by the bit-width spec.
    """
    positions = model.positions.astype(np.float32).astype(np.float64)
    sh = fake_quantize(model.sh_coeffs, params) if spec.sh_bits == 8 \
        else model.sh_coeffs.copy()
    opacity = quantize_fp16(model.opacity_logit) if spec.opacity_bits == 16 \
        else model.opacity_logit.copy()
    scale = quantize_fp16(model.scale_log) if spec.scale_bits == 16 \
        else model.scale_log.copy()
    rotation = quantize_fp16(model.rotation) if spec.rotation_bits == 16 \
        else model.rotation.copy()
    return GaussianModel(positions, sh, opacity, scale, rotation)
