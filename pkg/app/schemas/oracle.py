from typing import List

from pydantic import BaseModel

from app.schemas.common import ARRAY_MODEL, FloatArray


class KalmanState(BaseModel):
    """Filtered mean and covariance of the extended state [x_t, theta]."""
    model_config = ARRAY_MODEL

    t: int
    mean: FloatArray
    cov: FloatArray


class GridPoint(BaseModel):
    phi: List[float]
    objective: float


class GridSearchResult(BaseModel):
    phi_star: List[float]
    objective: float
    points: List[GridPoint]
