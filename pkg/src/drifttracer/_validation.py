"""Input validation helpers shared by the public functions and estimators."""

from __future__ import annotations

import numbers
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside the mathematical domain of a formula."""


def check_scalar(value, name: str, *, min_value=None, max_value=None,
                 include_min: bool = True, include_max: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, (numbers.Real, np.floating, np.integer)):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if min_value is not None:
        if value < min_value or (value == min_value and not include_min):
            bound = ">=" if include_min else ">"
            raise ValueError(f"{name} must be {bound} {min_value}, got {value}")
    if max_value is not None:
        if value > max_value or (value == max_value and not include_max):
            bound = "<=" if include_max else "<"
            raise ValueError(f"{name} must be {bound} {max_value}, got {value}")
    return value


def check_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    """Return ``x`` as a float array whose last axis has length ``dim``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        raise ValueError(f"{name} must be a vector, got a scalar")
    if dim is not None and arr.shape[-1] != dim:
        raise ValueError(f"{name} must have last dimension {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_samples(samples, name: str = "samples", min_samples: int = 1) -> np.ndarray:
    """2-D sample matrix (n_samples, n_features); 1-D input is a single feature."""
    from sklearn.utils.validation import check_array

    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return check_array(arr, ensure_min_samples=min_samples, input_name=name)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit seed or Generator is required")
    return np.random.default_rng(rng)


def as_generators(rng, count: int) -> list[np.random.Generator]:
    """One generator per batch member.

    A sequence must already have ``count`` entries; a single generator is only
    accepted for ``count == 1`` so that batch members never share a stream.
    """
    if isinstance(rng, Sequence) and not isinstance(rng, (str, bytes)):
        gens = [as_generator(g) for g in rng]
        if len(gens) != count:
            raise ValueError(f"expected {count} generators, got {len(gens)}")
        return gens
    if count != 1:
        raise ValueError("a batched state needs one generator per member")
    return [as_generator(rng)]
