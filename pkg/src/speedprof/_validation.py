"""Small input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def as_float_1d(x, name: str, *, allow_nan: bool = False) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_float_2d(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_length(**named) -> int:
    lengths = {name: len(arr) for name, arr in named.items()}
    unique = set(lengths.values())
    if len(unique) > 1:
        raise ValueError(f"length mismatch: {lengths}")
    return unique.pop()


def check_strictly_increasing(x: np.ndarray, name: str) -> None:
    diffs = np.diff(x)
    if np.any(diffs == 0):
        k = int(np.argmin(diffs))
        raise ValueError(f"{name} has duplicate entries (first at index {k}); duplicate sampling instants are rejected")
    if np.any(diffs < 0):
        k = int(np.argmin(diffs))
        raise ValueError(f"{name} must be strictly increasing (violated at index {k})")


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value
