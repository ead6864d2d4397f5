from typing import Annotated

import numpy as np
from pydantic import BeforeValidator, ConfigDict, PlainSerializer


def _as_float_array(value):
    return np.array(value, dtype=float, copy=True)


# numpy arrays inside pydantic models; lists are accepted and copied to float64
FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda a: np.asarray(a).tolist(), return_type=list),
]

ARRAY_MODEL = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))
