"""Gaussian scene container and index-subset selection.

All per-Gaussian parameters are stored raw (pre-activation): opacity as a
logit, scale as log-scale, rotation as an unnormalized quaternion.
Activations (sigmoid, exp, quaternion normalization) are applied only inside
the renderer, so a model round-trips through disk without double-activation.

Instances are treated as immutable after construction; pipeline stages that
mutate parameters (the fine-tuner) operate on their own copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Degree-3 spherical harmonics: 16 coefficients per color channel.
SH_COEFFS = 16
SH_CHANNELS = SH_COEFFS * 3

# Scalar parameter count per Gaussian: 3 position + 48 SH + 1 opacity +
# 3 scale + 4 rotation.
PARAMS_PER_GAUSSIAN = 3 + SH_CHANNELS + 1 + 3 + 4


@dataclass
class GaussianModel:
    positions: np.ndarray      # (N, 3) world units
    sh_coeffs: np.ndarray      # (N, 16, 3), coefficient 0 is the DC term
    opacity_logit: np.ndarray  # (N,)
    scale_log: np.ndarray      # (N, 3)
    rotation: np.ndarray       # (N, 4) quaternion (w, x, y, z), unnormalized

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float64)
        self.opacity_logit = np.ascontiguousarray(self.opacity_logit, dtype=np.float64)
        self.scale_log = np.ascontiguousarray(self.scale_log, dtype=np.float64)
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64)
        n = self.positions.shape[0]
        if self.positions.shape != (n, 3):
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if self.sh_coeffs.shape != (n, SH_COEFFS, 3):
            raise ValueError(f"sh_coeffs must be (N, {SH_COEFFS}, 3), got {self.sh_coeffs.shape}")
        if self.opacity_logit.shape != (n,):
            raise ValueError(f"opacity_logit must be (N,), got {self.opacity_logit.shape}")
        if self.scale_log.shape != (n, 3):
            raise ValueError(f"scale_log must be (N, 3), got {self.scale_log.shape}")
        if self.rotation.shape != (n, 4):
            raise ValueError(f"rotation must be (N, 4), got {self.rotation.shape}")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def validate(self) -> None:
        """Check finiteness and renderability; raises ValueError on violation."""
        for name in ("positions", "sh_coeffs", "opacity_logit", "scale_log", "rotation"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if self.n and np.any(np.linalg.norm(self.rotation, axis=1) == 0.0):
            raise ValueError("zero-norm quaternion cannot be normalized")

    def copy(self) -> "GaussianModel":
        return GaussianModel(
            self.positions.copy(),
            self.sh_coeffs.copy(),
            self.opacity_logit.copy(),
            self.scale_log.copy(),
            self.rotation.copy(),
        )

    def packed_float32_size(self) -> int:
        """Bytes needed to pack every parameter as raw float32."""
        return self.n * PARAMS_PER_GAUSSIAN * 4

    def allclose(self, other: "GaussianModel", rtol=0.0, atol=0.0) -> bool:
        return (
            self.n == other.n
            and np.allclose(self.positions, other.positions, rtol=rtol, atol=atol)
            and np.allclose(self.sh_coeffs, other.sh_coeffs, rtol=rtol, atol=atol)
            and np.allclose(self.opacity_logit, other.opacity_logit, rtol=rtol, atol=atol)
            and np.allclose(self.scale_log, other.scale_log, rtol=rtol, atol=atol)
            and np.allclose(self.rotation, other.rotation, rtol=rtol, atol=atol)
        )


def empty_model() -> GaussianModel:
    return GaussianModel(
        np.zeros((0, 3)), np.zeros((0, SH_COEFFS, 3)), np.zeros(0),
        np.zeros((0, 3)), np.zeros((0, 4)),
    )


def subset(model: GaussianModel, indices) -> GaussianModel:
    """Restrict a model to the given rows, preserving the given order.

    Indices must be unique and in [0, N); this is the masking primitive used
    to materialize a level of detail.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size:
        if idx.min() < 0 or idx.max() >= model.n:
            bad = idx[(idx < 0) | (idx >= model.n)][0]
            raise IndexError(f"index {bad} out of range for model of size {model.n}")
        if np.unique(idx).size != idx.size:
            raise ValueError("duplicate indices in subset selection")
    return GaussianModel(
        model.positions[idx],
        model.sh_coeffs[idx],
        model.opacity_logit[idx],
        model.scale_log[idx],
        model.rotation[idx],
    )
