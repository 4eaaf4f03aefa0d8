"""Input validation helpers shared across the package."""

from __future__ import annotations

import os

import numpy as np


def check_tensor(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a C-contiguous float64 ndarray and validate basic shape rules.

    Every tensor in this package is an order-N real array with all mode
    dimensions >= 1, stored row-major (last index fastest).
    """
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_mask(mask, shape: tuple[int, ...]) -> np.ndarray:
    """Validate an observation mask: same shape as the target, values in {0, 1}."""
    arr = np.ascontiguousarray(mask, dtype=np.float64)
    if arr.shape != tuple(shape):
        raise ValueError(f"mask shape {arr.shape} != target shape {tuple(shape)}")
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("mask entries must be 0 or 1")
    return arr


def check_dims(dims) -> tuple[int, ...]:
    """Validate a mode-dimension list: non-empty positive integers."""
    out = tuple(int(d) for d in dims)
    if not out or any(d < 1 for d in out):
        raise ValueError(f"invalid mode dimensions {dims!r}")
    return out


def as_seed(seed) -> int:
    """Resolve a seed: explicit int, else TNPS_SEED from the environment, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get("TNPS_SEED")
    return int(env) if env else 0
