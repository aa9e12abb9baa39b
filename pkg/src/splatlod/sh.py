"""Real spherical harmonics basis up to degree 3 with the 3DGS constants.

Color is decoded as 0.5 + sum_k basis_k(dir) * coeffs_k per channel, clamped
to >= 0. Basis gradients with respect to the (unit) direction feed the
renderer's backward pass.
"""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Basis values for unit directions; dirs (K, 3) -> (K, 16)."""
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    b = np.empty((dirs.shape[0], 16))
    b[:, 0] = C0
    b[:, 1] = -C1 * y
    b[:, 2] = C1 * z
    b[:, 3] = -C1 * x
    b[:, 4] = C2[0] * x * y
    b[:, 5] = C2[1] * y * z
    b[:, 6] = C2[2] * (2.0 * zz - xx - yy)
    b[:, 7] = C2[3] * x * z
    b[:, 8] = C2[4] * (xx - yy)
    b[:, 9] = C3[0] * y * (3.0 * xx - yy)
    b[:, 10] = C3[1] * x * y * z
    b[:, 11] = C3[2] * y * (4.0 * zz - xx - yy)
    b[:, 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    b[:, 13] = C3[4] * x * (4.0 * zz - xx - yy)
    b[:, 14] = C3[5] * z * (xx - yy)
    b[:, 15] = C3[6] * x * (xx - 3.0 * yy)
    return b


def sh_basis_grad(dirs: np.ndarray) -> np.ndarray:
    """d(basis_k)/d(dir) treating dir components as free; (K, 3) -> (K, 16, 3)."""
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    zero = np.zeros_like(x)
    g = np.empty((dirs.shape[0], 16, 3))
    g[:, 0] = 0.0
    g[:, 1, 0], g[:, 1, 1], g[:, 1, 2] = zero, -C1 * np.ones_like(x), zero
    g[:, 2, 0], g[:, 2, 1], g[:, 2, 2] = zero, zero, C1 * np.ones_like(x)
    g[:, 3, 0], g[:, 3, 1], g[:, 3, 2] = -C1 * np.ones_like(x), zero, zero
    g[:, 4, 0], g[:, 4, 1], g[:, 4, 2] = C2[0] * y, C2[0] * x, zero
    g[:, 5, 0], g[:, 5, 1], g[:, 5, 2] = zero, C2[1] * z, C2[1] * y
    g[:, 6, 0], g[:, 6, 1], g[:, 6, 2] = -2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z
    g[:, 7, 0], g[:, 7, 1], g[:, 7, 2] = C2[3] * z, zero, C2[3] * x
    g[:, 8, 0], g[:, 8, 1], g[:, 8, 2] = 2.0 * C2[4] * x, -2.0 * C2[4] * y, zero
    g[:, 9, 0] = C3[0] * 6.0 * x * y
    g[:, 9, 1] = C3[0] * (3.0 * xx - 3.0 * yy)
    g[:, 9, 2] = zero
    g[:, 10, 0] = C3[1] * y * z
    g[:, 10, 1] = C3[1] * x * z
    g[:, 10, 2] = C3[1] * x * y
    g[:, 11, 0] = C3[2] * (-2.0 * x * y)
    g[:, 11, 1] = C3[2] * (4.0 * zz - xx - 3.0 * yy)
    g[:, 11, 2] = C3[2] * 8.0 * y * z
    g[:, 12, 0] = C3[3] * (-6.0 * x * z)
    g[:, 12, 1] = C3[3] * (-6.0 * y * z)
    g[:, 12, 2] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    g[:, 13, 0] = C3[4] * (4.0 * zz - 3.0 * xx - yy)
    g[:, 13, 1] = C3[4] * (-2.0 * x * y)
    g[:, 13, 2] = C3[4] * 8.0 * x * z
    g[:, 14, 0] = C3[5] * 2.0 * x * z
    g[:, 14, 1] = C3[5] * (-2.0 * y * z)
    g[:, 14, 2] = C3[5] * (xx - yy)
    g[:, 15, 0] = C3[6] * (3.0 * xx - 3.0 * yy)
    g[:, 15, 1] = C3[6] * (-6.0 * x * y)
    g[:, 15, 2] = zero
    return g


def evaluate_sh_batch(coeffs: np.ndarray, dirs: np.ndarray):
    """Decoded colors for (K, 16, 3) coefficients at (K, 3) unit directions.

    Returns (colors (K, 3) clamped to >= 0, pre-clamp values (K, 3)).
    """
    basis = sh_basis(dirs)
    pre = 0.5 + np.einsum("kj,kjc->kc", basis, coeffs)
    return np.maximum(pre, 0.0), pre


def evaluate_sh(coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """Single-Gaussian color: (16, 3) coefficients, unit view_dir -> rgb (3,)."""
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(1, 16, 3)
    color, _ = evaluate_sh_batch(coeffs, np.asarray(view_dir, dtype=np.float64).reshape(1, 3))
    return color[0]
