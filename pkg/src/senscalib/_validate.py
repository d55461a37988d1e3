"""Input validation helpers shared by the estimators and the data model."""

import numpy as np

from .exceptions import ValidationError


def as_float_matrix(a, name: str, *, allow_empty_cols: bool = False) -> np.ndarray:
    """Coerce to a 2-D float64 array with finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if not allow_empty_cols and arr.shape[1] == 0:
        raise ValidationError(f"{name} must have at least one column")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_float_vector(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64).ravel()
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_same_rows(n: int, arr: np.ndarray, name: str) -> None:
    if arr.shape[0] != n:
        raise ValidationError(
            f"{name} has {arr.shape[0]} rows, expected {n}"
        )


def check_in_range(value, name: str, lo=None, hi=None, *, lo_open=False, hi_open=False):
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ValidationError(f"{name}={value!r} out of range")
    if hi is not None and (value >= hi if hi_open else value > hi):
        raise ValidationError(f"{name}={value!r} out of range")
    return value


def freeze(arr: np.ndarray) -> np.ndarray:
    """Mark an array read-only so shared datasets stay immutable."""
    arr.flags.writeable = False
    return arr
