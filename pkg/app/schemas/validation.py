from pydantic import BaseModel, ConfigDict, Field

from app.schemas.common import ARRAY_MODEL, FloatArray


class SmcConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    particles: int = Field(default=1000, ge=100)
    threshold: float = Field(default=0.5, gt=0.0, le=1.0)
    shrinkage: float = Field(default=0.98, gt=0.9, lt=1.0)
    seed: int = Field(default=0, ge=0)


class SmcEstimate(BaseModel):
    """Filtered posterior summaries; row 0 is the prior, row t the estimate given y_1..y_t."""
    model_config = ARRAY_MODEL

    theta_mean: FloatArray
    theta_cov: FloatArray
    x_mean: FloatArray
    ess: FloatArray
    resamples: int


class ValidationReport(BaseModel):
    model_config = ARRAY_MODEL

    trace_mse: FloatArray
    trace_bound: FloatArray
    violations: int
    runs: int
    excluded: int

    @property
    def sum_trace_mse(self) -> float:
        return float(self.trace_mse.sum())

    @property
    def sum_trace_bound(self) -> float:
        return float(self.trace_bound.sum())
