from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.bound import Criterion
from app.schemas.common import ARRAY_MODEL, FloatArray
from app.schemas.policy import CaseId, MarkovInputPolicy

U64_MAX = 2**64 - 1


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_iter: int = Field(default=200, ge=1)
    restarts: int = Field(default=3, ge=1, le=3)
    # relative best-so-far improvement below tol for `patience` iterations stops a run
    tol: float = Field(default=1e-3, gt=0)
    patience: int = Field(default=5, ge=1)
    simplex_step: float = Field(default=1.0, gt=0)


class DesignConfig(BaseModel):
    """Everything one objective evaluation or optimization run depends on."""
    model_config = ConfigDict(extra="forbid")

    model: str = "benchmark"
    case: CaseId = CaseId.case4
    u_min: float = -0.8
    u_max: float = 0.8
    b: int = Field(default=2, ge=2)
    k: int = Field(default=0, ge=0)
    N: int = Field(default=50, ge=1)
    M: int = Field(default=500, ge=2)
    M_u: int = Field(default=500, ge=1)
    criterion: Criterion = "trace"
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    noise_seed: Optional[int] = Field(default=None, ge=0, le=U64_MAX)
    optimizer: OptimizerSettings = OptimizerSettings()
    threads: int = Field(default=1, ge=1)
    batch_size: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def _check_horizon(self):
        if self.N < self.k + 1:
            raise ValueError(f"N={self.N} must be at least k+1={self.k + 1}")
        if self.u_min >= self.u_max:
            raise ValueError(f"u_min={self.u_min} must be below u_max={self.u_max}")
        return self

    @property
    def table_seed(self) -> int:
        return self.seed if self.noise_seed is None else self.noise_seed


class ObjectiveBreakdown(BaseModel):
    """One objective evaluation with the pieces needed for error bars and reports."""
    model_config = ARRAY_MODEL

    value: float
    path_sums: FloatArray
    mean_bound: FloatArray
    mean_state_bound: FloatArray
    phi_trace: FloatArray

    @property
    def standard_error(self) -> float:
        count = self.path_sums.size
        if count < 2:
            return float("nan")
        return float(np.std(self.path_sums, ddof=1) / np.sqrt(count))


class DesignIteration(BaseModel):
    iteration: int
    phi: List[float]
    objective: float
    best_objective: float


class DesignResult(BaseModel):
    model_config = ARRAY_MODEL

    case: CaseId
    parameter_names: List[str]
    phi_star: FloatArray
    policy: MarkovInputPolicy
    objective: float
    bound_trace: FloatArray
    history: List[DesignIteration]
    converged: bool
    evaluations: int
    wall_time: float


class CaseRanking(BaseModel):
    results: List[DesignResult]

    @property
    def best(self) -> DesignResult:
        return self.results[0]
