"""Input checking shared by the estimator and the command-line tools.

Panels travel as (N, 4, H, W, 3) uint8 arrays.  The helpers normalize the
various ways callers hand those over (lists, float arrays in [0, 1]) into
the canonical form and raise early with messages that name the offending
dimension instead of letting a reshape fail somewhere deeper.
"""

from __future__ import annotations

import numpy as np


def check_panels(X, resolution: int | None = None) -> np.ndarray:
    """Coerce X to (N, 4, H, W, 3) uint8 panels, validating shape and range."""
    arr = np.asarray(X)
    if arr.ndim == 4 and arr.shape[0] != 0:
        # a single panel; promote to a batch of one
        arr = arr[None]
    if arr.ndim != 5:
        raise ValueError(f"panels must have shape (N, 4, H, W, 3), got {arr.shape}")
    n, slots, h, w, ch = arr.shape
    if slots != 4:
        raise ValueError(f"each panel needs exactly 4 image slots, got {slots}")
    if ch != 3:
        raise ValueError(f"images must be RGB with a trailing channel axis, got {ch} channels")
    if h != w:
        raise ValueError(f"images must be square, got {h}x{w}")
    if n == 0:
        raise ValueError("panel batch is empty")
    if resolution is not None and h != resolution:
        raise ValueError(f"images are {h}x{w} but the model expects "
                         f"{resolution}x{resolution}")
    if arr.dtype == np.uint8:
        return np.ascontiguousarray(arr)
    if np.issubdtype(arr.dtype, np.floating):
        if not np.isfinite(arr).all():
            raise ValueError("panel array contains non-finite values")
        lo, hi = float(arr.min()), float(arr.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"float panels must lie in [0, 1], got range [{lo:g}, {hi:g}]")
        return np.ascontiguousarray(np.round(arr * 255.0).astype(np.uint8))
    if np.issubdtype(arr.dtype, np.integer):
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi > 255:
            raise ValueError(f"integer panels must lie in [0, 255], got range [{lo}, {hi}]")
        return np.ascontiguousarray(arr.astype(np.uint8))
    raise ValueError(f"unsupported panel dtype {arr.dtype}")


def check_outliers(y, n_panels: int) -> np.ndarray:
    """Coerce y to (N,) int64 outlier slot indices in [0, 3]."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"outlier labels must be one-dimensional, got shape {arr.shape}")
    if arr.shape[0] != n_panels:
        raise ValueError(f"got {arr.shape[0]} labels for {n_panels} panels")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.round(np.asarray(arr, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(arr, dtype=np.float64)):
            raise ValueError("outlier labels must be integers")
        arr = rounded
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 3):
        raise ValueError(f"outlier labels must lie in [0, 3], got range "
                         f"[{arr.min()}, {arr.max()}]")
    return arr


def check_fraction(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie strictly between 0 and 1, got {value}")
    return value
