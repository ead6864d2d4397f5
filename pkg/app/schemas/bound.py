from typing import Literal

import numpy as np
from pydantic import BaseModel

from app.schemas.common import ARRAY_MODEL, FloatArray

Criterion = Literal["trace", "logdet"]


class Pim(BaseModel):
    """Posterior information matrix of z_t = [x_t, theta], kept as its three blocks."""
    model_config = ARRAY_MODEL

    Jx: FloatArray
    Jxtheta: FloatArray
    Jtheta: FloatArray

    @classmethod
    def from_matrix(cls, J: np.ndarray, n: int) -> "Pim":
        J = np.asarray(J, dtype=float)
        return cls(Jx=J[:n, :n], Jxtheta=J[:n, n:], Jtheta=J[n:, n:])


class HBlocks(BaseModel):
    """Expected Hessian blocks of -log p(x_{t+1}, y_{t+1} | x_t, theta).

    Variables are ordered (x_t, theta, x_{t+1}).
    """
    model_config = ARRAY_MODEL

    H11: FloatArray
    H12: FloatArray
    H13: FloatArray
    H22: FloatArray
    H23: FloatArray
    H33: FloatArray

    @classmethod
    def from_matrix(cls, H: np.ndarray, n: int, q: int) -> "HBlocks":
        H = np.asarray(H, dtype=float)
        a, b = n, n + q
        return cls(
            H11=H[:a, :a],
            H12=H[:a, a:b],
            H13=H[:a, b:],
            H22=H[a:b, a:b],
            H23=H[a:b, b:],
            H33=H[b:, b:],
        )


class BoundTrajectory(BaseModel):
    """Bounds for t = 1..N. ``state_bound`` is the x-block, kept for diagnostics."""
    model_config = ARRAY_MODEL

    t: np.ndarray
    theta_bound: FloatArray
    state_bound: FloatArray
    phi: FloatArray
    criterion: Criterion = "trace"

    @property
    def total(self) -> float:
        return float(np.sum(self.phi))
