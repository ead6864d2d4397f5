from functools import cached_property
from typing import Callable

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.core.errors import ModelDefinitionError
from app.schemas.common import ARRAY_MODEL, FloatArray

# Batched maps: x (..., n), theta (..., q), u (..., p) broadcastable.
StateMap = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class GaussianSsm(BaseModel):
    """State-space model with additive Gaussian noise and a Gaussian prior on z0 = [x0, theta].

    Every map returns arrays with the leading batch axes of its arguments:
    ``drift`` -> (..., n), ``observation`` -> (..., m), ``jac_drift_x`` ->
    (..., n, n), ``jac_drift_theta`` -> (..., n, q), ``jac_obs_x`` -> (..., m, n),
    ``jac_obs_theta`` -> (..., m, q).
    """
    model_config = ARRAY_MODEL

    name: str
    n: int = Field(ge=1)
    q: int = Field(ge=1)
    p: int = Field(ge=1)
    m: int = Field(ge=1)

    drift: StateMap
    observation: StateMap
    jac_drift_x: StateMap
    jac_drift_theta: StateMap
    jac_obs_x: StateMap
    jac_obs_theta: StateMap

    Q: FloatArray
    R: FloatArray
    prior_mean: FloatArray
    prior_cov: FloatArray

    @model_validator(mode="after")
    def _check_dimensions(self):
        s = self.n + self.q
        expected = {
            "Q": (self.n, self.n),
            "R": (self.m, self.m),
            "prior_mean": (s,),
            "prior_cov": (s, s),
        }
        for field, shape in expected.items():
            actual = getattr(self, field).shape
            if actual != shape:
                raise ModelDefinitionError(
                    f"{self.name}: {field} has shape {actual}, expected {shape}"
                )
        for field in ("Q", "R", "prior_cov"):
            _cholesky_or_raise(getattr(self, field), f"{self.name}: {field}")
        return self

    @property
    def s(self) -> int:
        return self.n + self.q

    @cached_property
    def Q_inv(self) -> np.ndarray:
        return np.linalg.inv(self.Q)

    @cached_property
    def R_inv(self) -> np.ndarray:
        return np.linalg.inv(self.R)

    @cached_property
    def Q_chol(self) -> np.ndarray:
        return _cholesky_or_raise(self.Q, f"{self.name}: Q")

    @cached_property
    def R_chol(self) -> np.ndarray:
        return _cholesky_or_raise(self.R, f"{self.name}: R")

    @cached_property
    def prior_chol(self) -> np.ndarray:
        return _cholesky_or_raise(self.prior_cov, f"{self.name}: prior_cov")

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return z[..., : self.n], z[..., self.n :]


def _cholesky_or_raise(matrix: np.ndarray, label: str) -> np.ndarray:
    if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=0.0):
        raise ModelDefinitionError(f"{label} is not symmetric")
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as e:
        raise ModelDefinitionError(f"{label} is not positive definite") from e


class ExtendedState(BaseModel):
    model_config = ARRAY_MODEL

    x: FloatArray
    theta: FloatArray

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.theta])


class NoiseTable(BaseModel):
    """Frozen standard-normal draws shared by every evaluation with the same seed.

    ``prior[i]`` seeds path i, ``process[t, i]`` and ``measurement[t, i]`` drive
    path i between t and t + 1. ``measurement`` is None when not drawn.
    """
    model_config = ARRAY_MODEL

    seed: int
    prior: FloatArray
    process: FloatArray
    measurement: FloatArray | None = None

    @property
    def paths(self) -> int:
        return self.prior.shape[0]

    @property
    def horizon(self) -> int:
        return self.process.shape[0]


class SampleEnsemble(BaseModel):
    """M simulated trajectories of one input sequence.

    ``theta`` is stored once per path: it is constant along the horizon.
    ``states[t]`` is x_t for t = 0..N and ``measurements[t]`` is y_{t+1}.
    """
    model_config = ARRAY_MODEL

    theta: FloatArray
    states: FloatArray
    measurements: FloatArray
    inputs: FloatArray

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def step(self, t: int) -> dict:
        """Arguments of the H-block estimators for the transition t -> t + 1."""
        if not 0 <= t < self.horizon:
            raise IndexError(f"step {t} outside horizon {self.horizon}")
        return {
            "x_t": self.states[t],
            "theta": self.theta,
            "x_next": self.states[t + 1],
            "u_t": self.inputs[t],
            "u_next": self.inputs[min(t + 1, self.horizon - 1)],
        }
