"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from glocal.data import Image, ReportRecord


def check_images(X, input_size: int) -> np.ndarray:
    """Normalize image input to a float (n, size, size) array in [0, 1].

    Accepts an array, a list of 2-D arrays, or a list of records carrying
    images.
    """
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], ReportRecord):
        X = [r.image.pixels for r in X]
    elif isinstance(X, (list, tuple)) and X and isinstance(X[0], Image):
        X = [img.pixels for img in X]
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (n, h, w) images, got shape {arr.shape}")
    if arr.shape[1:] != (input_size, input_size):
        raise ValueError(f"images must be {input_size}x{input_size}, got {arr.shape[1:]}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("image values outside [0, 1]")
    return arr


def check_records(X) -> list[ReportRecord]:
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("expected a non-empty list of ReportRecord")
    bad = [i for i, r in enumerate(X) if not isinstance(r, ReportRecord)]
    if bad:
        raise ValueError(f"entries at positions {bad[:5]} are not ReportRecord")
    return list(X)


def check_label_matrix(y, n_samples: int, n_classes: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.shape != (n_samples, n_classes):
        raise ValueError(f"labels must be ({n_samples}, {n_classes}), got {arr.shape}")
    if not np.all(np.isin(arr, (1, 0, -1, -2))):
        raise ValueError("labels must be in {1, 0, -1, -2}")
    return arr
