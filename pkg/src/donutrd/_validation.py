"""Input checks for the array-level (estimator) entry points."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .errors import DataError


def check_running_variable(X) -> np.ndarray:
    """Return ages as a 1-d int64 array.

    Accepts a 1-d sequence or a single-column 2-d array. Ages must be whole
    numbers; the discrete running variable is never jittered.
    """
    arr = check_array(X, ensure_2d=False, dtype=np.float64)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"expected a single running-variable column, got {arr.shape[1]}")
        arr = arr[:, 0]
    if np.any(arr != np.round(arr)):
        raise DataError("ages must be integers")
    return arr.astype(np.int64)


def check_outcome(y, n: int, name: str = "y") -> np.ndarray:
    arr = check_array(y, ensure_2d=False, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-d")
    check_consistent_length(np.empty(n), arr)
    return arr


def check_binary(d, n: int, name: str = "treatment") -> np.ndarray:
    arr = check_outcome(d, n, name)
    if not np.isin(arr, (0.0, 1.0)).all():
        raise DataError(f"{name} must be 0/1")
    return arr
