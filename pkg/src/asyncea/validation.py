"""Input checks shared by the estimators and the functional API."""

from __future__ import annotations

import numpy as np

from asyncea.search_space import BoundsSpec, MutationParams, validate


def check_problem(problem):
    """Return ``problem`` if it quacks like a fitness problem."""
    if not callable(getattr(problem, "evaluate", None)) or not isinstance(
        getattr(problem, "bounds", None), BoundsSpec
    ):
        raise TypeError(f"expected a fitness problem with .bounds and .evaluate, got {type(problem).__name__}")
    return problem


def check_candidate(x, bounds: BoundsSpec) -> np.ndarray:
    """Integer copy of ``x``; raises if it has the wrong shape or leaves the box."""
    arr = np.asarray(x)
    if arr.dtype.kind not in "iu":
        if arr.dtype.kind != "f" or not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("candidate must hold integers")
    arr = arr.astype(np.int64)
    if not validate(arr, bounds):
        raise ValueError("candidate lies outside the bounds")
    return arr


def check_fitness_sequence(f, min_length: int = 1) -> np.ndarray:
    arr = np.asarray(f, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"fitness sequence must be 1-D, got shape {arr.shape}")
    if arr.size < min_length:
        raise ValueError(f"fitness sequence needs at least {min_length} values")
    if not np.all(np.isfinite(arr)):
        raise ValueError("fitness sequence contains NaN or inf")
    return arr


def check_mutation(p, r, min_delta: int = 0) -> MutationParams:
    return MutationParams(float(p), float(r), int(min_delta))
