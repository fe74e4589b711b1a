from typing import Annotated

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, PlainSerializer


def _as_float_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("array contains non-finite values")
    return arr


def _as_bool_array(value) -> np.ndarray:
    return np.array(value, dtype=bool)


# numpy arrays inside models: validated from nested lists, serialized back to lists
FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]
BoolArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_bool_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]


class FrozenModel(BaseModel):
    """Immutable value object; transforms return updated copies."""

    model_config = ConfigDict(frozen=True, extra="forbid")


class ArrayModel(BaseModel):
    """Immutable model carrying numpy array fields."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)
