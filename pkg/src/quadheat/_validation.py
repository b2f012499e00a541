"""Small input checks shared by the estimators and functional API."""

from __future__ import annotations

import numbers

import numpy as np


def check_values(values, n: int) -> np.ndarray:
    v = np.array(values, dtype=float, copy=True).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"expected {n} values, got {v.shape[0]}")
    v.flags.writeable = False
    return v


def check_finite(values, what: str = "array") -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite {what}")


def check_positive(value, name: str, strict: bool = True) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return float(value)


def as_grid_function(f, grid=None):
    """Accept a GridFunction, or an array together with a grid."""
    from .grid import GridFunction

    if isinstance(f, GridFunction):
        if grid is not None and f.grid != grid:
            raise ValueError("field lives on a different grid")
        return f
    if grid is None:
        raise TypeError("a bare array needs an explicit grid")
    return GridFunction(grid, f)


def check_same_grid(*fields) -> None:
    grids = {f.grid for f in fields}
    if len(grids) > 1:
        raise ValueError("fields live on different grids")
