"""Input validation shared by the estimators and the command line."""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = ["check_image", "check_images", "check_pairs", "check_positive_int", "check_even"]


def check_image(img, name: str = "image", allow_out_of_range: bool = False) -> np.ndarray:
    """Return ``img`` as a planar float64 ``(C, H, W)`` array.

    A 2-D array is treated as a single grayscale channel. Values must be finite
    and, unless ``allow_out_of_range``, lie in [0, 1].
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"{name}: expected (C, H, W) with C in (1, 3), got shape {arr.shape}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"{name}: empty spatial dimensions {arr.shape[1:]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or infinite values")
    if not allow_out_of_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name}: pixel values must lie in [0, 1], got [{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_images(images, name: str = "X") -> list[np.ndarray]:
    """Validate a batch given as a 4-D array or a sequence of images."""
    if isinstance(images, np.ndarray) and images.ndim == 4:
        seq: Sequence = list(images)
    elif isinstance(images, np.ndarray) and images.ndim in (2, 3):
        raise ValueError(f"{name}: expected a batch of images, got a single array of shape {images.shape}")
    else:
        seq = list(images)
    if not seq:
        raise ValueError(f"{name}: empty batch")
    return [check_image(img, f"{name}[{i}]") for i, img in enumerate(seq)]


def check_pairs(inputs, targets, scale: int = 1) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Validate degraded/clean pairs; targets must be ``scale`` times the inputs."""
    xs = check_images(inputs, "X")
    ys = check_images(targets, "y")
    if len(xs) != len(ys):
        raise ValueError(f"X and y have different lengths: {len(xs)} vs {len(ys)}")
    for i, (x, y) in enumerate(zip(xs, ys)):
        want = (x.shape[0], x.shape[1] * scale, x.shape[2] * scale)
        if y.shape != want:
            raise ValueError(f"pair {i}: target shape {y.shape} does not match input {x.shape} at scale {scale}")
    return xs, ys


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_even(value: int, name: str = "degree") -> int:
    if value % 2:
        raise ValueError(f"{name} must be even, got {value}")
    return value
