from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.core.errors import PolicyParameterError
from app.schemas.common import ARRAY_MODEL, FloatArray

ROW_SUM_TOL = 1e-12


class CaseId(str, Enum):
    case1 = "Case1"
    case2 = "Case2"
    case3 = "Case3"
    case4 = "Case4"
    free = "Free"


class InputSpace(BaseModel):
    """Discretized input grid and the window states of a k-th order chain.

    ``grid`` lists the r = b^p grid points in lexicographic order (first
    input dimension slowest); ``windows[w]`` lists the grid indices of window
    state w, also lexicographic.
    """
    model_config = ARRAY_MODEL

    p: int = Field(ge=1)
    b: int = Field(ge=2)
    k: int = Field(ge=0)
    u_min: FloatArray
    u_max: FloatArray
    levels: FloatArray
    grid: FloatArray
    windows: np.ndarray

    @property
    def r(self) -> int:
        return self.grid.shape[0]

    @property
    def states(self) -> int:
        return self.windows.shape[0]

    @property
    def raw_parameter_count(self) -> int:
        """Entries of P_gamma and P_pi before any tying: r^(k+1) (1 + r^(k+1))."""
        return self.states * (1 + self.states)

    def consistent_targets(self, window: int) -> np.ndarray:
        """Windows reachable from ``window`` by a one-step shift (all windows when k = 0)."""
        if self.k == 0:
            return np.arange(self.states)
        tail = window % (self.r**self.k)
        return tail * self.r + np.arange(self.r)


class MarkovInputPolicy(BaseModel):
    """Initial law P_gamma over window states and row-stochastic transitions P_pi."""
    model_config = ARRAY_MODEL

    space: InputSpace
    P_gamma: FloatArray
    P_pi: FloatArray

    @model_validator(mode="after")
    def _check_stochastic(self):
        S = self.space.states
        if self.P_gamma.shape != (S,) or self.P_pi.shape != (S, S):
            raise PolicyParameterError(
                f"policy shapes {self.P_gamma.shape}, {self.P_pi.shape} do not match {S} states"
            )
        for label, arr in (("P_gamma", self.P_gamma), ("P_pi", self.P_pi)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
                raise PolicyParameterError(f"{label} entries must lie in [0, 1]")
        if abs(self.P_gamma.sum() - 1.0) > ROW_SUM_TOL:
            raise PolicyParameterError(f"P_gamma sums to {self.P_gamma.sum()!r}")
        sums = self.P_pi.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise PolicyParameterError(f"P_pi row {int(bad[0])} sums to {sums[bad[0]]!r}")
        return self

    def inconsistent_mass(self) -> np.ndarray:
        """Per-row probability on transitions that break window overlap."""
        mask = np.ones_like(self.P_pi, dtype=bool)
        for w in range(self.space.states):
            mask[w, self.space.consistent_targets(w)] = False
        return np.where(mask, self.P_pi, 0.0).sum(axis=1)


class PolicyTemplate(BaseModel):
    """A tied parametrization phi in [0, 1]^arity -> MarkovInputPolicy."""
    model_config = ARRAY_MODEL

    case: CaseId
    space: InputSpace

    @property
    def arity(self) -> int:
        if self.case == CaseId.free:
            return self.space.states * (1 + self.space.r)
        return {CaseId.case1: 1, CaseId.case2: 2, CaseId.case3: 3, CaseId.case4: 0}[self.case]

    @property
    def parameter_names(self) -> list[str]:
        named = {
            CaseId.case1: ["p1"],
            CaseId.case2: ["p1", "p2"],
            CaseId.case3: ["p0", "p1", "p2"],
            CaseId.case4: [],
        }
        if self.case in named:
            return named[self.case]
        return [f"phi_{i}" for i in range(self.arity)]

    @property
    def initial_phi(self) -> np.ndarray:
        """The PRBS point: every tied probability at one half."""
        return np.full(self.arity, 0.5)
