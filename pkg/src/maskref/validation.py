"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ContractError


def check_random_state(seed) -> np.random.Generator:
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    ``None`` gives a fresh OS-seeded generator, an int seeds a new one and an
    existing generator is passed through untouched.
    """
    if seed is None:
        return np.random.default_rng()
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, numbers.Integral):
        return np.random.default_rng(int(seed))
    raise ContractError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_video(frames, *, name: str = "frames", value_range=(-1.0, 1.0)) -> np.ndarray:
    """Validate an ``F x H x W x 3`` float video and return it as float64."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ContractError(f"{name} must have shape F x H x W x 3, got {arr.shape}")
    if arr.shape[0] < 1:
        raise ContractError(f"{name} must contain at least one frame")
    _check_finite_range(arr, name, value_range)
    return arr


def check_image(image, *, name: str = "image", value_range=(-1.0, 1.0)) -> np.ndarray:
    """Validate an ``H x W x 3`` float image and return it as float64."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ContractError(f"{name} must have shape H x W x 3, got {arr.shape}")
    _check_finite_range(arr, name, value_range)
    return arr


def check_binary(data, *, name: str = "mask") -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.isin(arr, (0, 1)).all():
        raise ContractError(f"{name} must only contain 0 and 1")
    return arr.astype(np.uint8)


def check_interval(value, name: str, lo: float, hi: float) -> float:
    value = float(value)
    if not (lo <= value <= hi) or not np.isfinite(value):
        raise ContractError(f"{name}={value} outside [{lo}, {hi}]")
    return value


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if not isinstance(value, numbers.Integral) or value < minimum:
        raise ContractError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _check_finite_range(arr, name, value_range):
    if not np.isfinite(arr).all():
        raise ContractError(f"{name} contains non-finite values")
    if value_range is not None:
        lo, hi = value_range
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise ContractError(f"{name} values must lie in [{lo}, {hi}]")
