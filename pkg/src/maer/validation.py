"""Input validation helpers and the error types raised across the package."""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "ConfigurationError",
    "IdxFormatError",
    "as_float_matrix",
    "as_label_vector",
    "check_width",
    "check_same_shape",
    "check_labels_in_range",
]


class DimensionError(ValueError):
    """An array's shape does not match what the operation requires."""


class ConfigurationError(ValueError):
    """A parameter or method setting is invalid or inconsistent."""


class IdxFormatError(ValueError):
    """An IDX file is malformed: bad magic, truncated, or inconsistent."""


def as_float_matrix(x, name: str = "X") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf values")
    return arr


def as_label_vector(y, name: str = "y") -> np.ndarray:
    """Coerce ``y`` to a 1-D integer array."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(np.asarray(arr, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(arr, dtype=np.float64)):
            raise ValueError(f"{name} must contain integer class indices")
        arr = rounded
    return arr.astype(np.int64)


def check_width(x: np.ndarray, expected: int, name: str = "X") -> None:
    """Require ``x`` to have ``expected`` columns."""
    actual = x.shape[1]
    if actual != expected:
        raise DimensionError(
            f"{name} has width {actual}, expected width {expected}"
        )


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(
            f"{name_a} has shape {a.shape} but {name_b} has shape {b.shape}"
        )


def check_labels_in_range(labels: np.ndarray, num_classes: int, name: str = "labels") -> None:
    if labels.size == 0:
        raise ValueError(f"{name} is empty")
    lo, hi = labels.min(), labels.max()
    if lo < 0 or hi >= num_classes:
        raise ValueError(
            f"{name} must lie in [0, {num_classes}), got range [{lo}, {hi}]"
        )
