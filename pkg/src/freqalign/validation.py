"""Input validation shared by the functional cores and the estimators."""

from __future__ import annotations

import numpy as np


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation (NaN, inf, bad shape)."""


class DegenerateFeatureWarning(RuntimeWarning):
    """A zero-norm feature vector was replaced by a uniform unit vector."""


class OptimizationWarning(RuntimeWarning):
    """A numerical corner case was hit during the attack loop."""


def as_finite_array(x, ndim: int | tuple[int, ...], name: str = "input") -> np.ndarray:
    """Return ``x`` as a float64 array, rejecting wrong rank, empty axes and non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    allowed = (ndim,) if isinstance(ndim, int) else ndim
    if arr.ndim not in allowed:
        raise DomainError(f"{name} must have ndim in {allowed}, got shape {arr.shape}")
    if arr.size == 0 or min(arr.shape) < 1:
        raise DomainError(f"{name} has an empty axis: shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def check_image(image, name: str = "image") -> np.ndarray:
    """Validate an ``H x W x C`` image with finite entries."""
    return as_finite_array(image, 3, name)


def check_unit_range(image, name: str = "image", atol: float = 0.0) -> np.ndarray:
    arr = check_image(image, name)
    if arr.min() < -atol or arr.max() > 1.0 + atol:
        raise DomainError(f"{name} entries must lie in [0, 1]")
    return arr


def check_images(X, name: str = "X") -> np.ndarray:
    """Validate a batch ``N x H x W x C`` (a single image is promoted to a batch of one)."""
    arr = as_finite_array(X, (3, 4), name)
    return arr[None] if arr.ndim == 3 else arr
