"""Adaptive-moment optimizer with per-Gaussian masked updates.

Moments and step counts are tracked per Gaussian row; an update touches only
the rows passed to step(), so Gaussians outside the sampled detail level
keep both their parameters and their optimizer state bit-identical.
"""

from __future__ import annotations

import numpy as np


class MaskedAdam:
    def __init__(self, shape, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.steps = np.zeros(shape[0], dtype=np.int64)

    def step(self, param: np.ndarray, grad_rows: np.ndarray, rows: np.ndarray,
             lr: float) -> None:
        """In-place update of param[rows] given the gradient for those rows."""
        if rows.size == 0:
            return
        self.steps[rows] += 1
        t = self.steps[rows].astype(np.float64)
        extra = (1,) * (param.ndim - 1)
        t = t.reshape((-1,) + extra)
        m = self.beta1 * self.m[rows] + (1.0 - self.beta1) * grad_rows
        v = self.beta2 * self.v[rows] + (1.0 - self.beta2) * grad_rows ** 2
        self.m[rows] = m
        self.v[rows] = v
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        param[rows] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
