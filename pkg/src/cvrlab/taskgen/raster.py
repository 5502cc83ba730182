"""Deterministic rasterizer for scene objects.

A pixel belongs to a shape when its center lies inside the outline; there is
no anti-aliasing, so rendering the same scene twice is byte-identical.
Objects are drawn in list order and later objects overwrite earlier ones,
which is what lets a contained disc sit visibly on top of its container.
"""

from __future__ import annotations

import numpy as np

from .scene import SceneObject

# Canvas slack and the smallest admissible on-screen footprint.  Generation
# respects both already; the rasterizer re-checks so a hand-built scene that
# would render invisibly (or clipped) fails loudly instead.
CANVAS_MARGIN = 0.005
MIN_FEATURE_PIXELS = 2.0


class RasterError(ValueError):
    pass


def _pixel_centers(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    return xs, ys


def _circle_mask(obj: SceneObject, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    dx = xs - obj.center[0]
    dy = ys - obj.center[1]
    return dx * dx + dy * dy <= obj.size * obj.size


def _polygon_mask(obj: SceneObject, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    verts = obj.vertices()
    cx = sum(v[0] for v in verts) / len(verts)
    cy = sum(v[1] for v in verts) / len(verts)
    mask = np.zeros(xs.shape, dtype=bool)
    # Fan triangulation from the vertex centroid.  All shape templates are
    # star-shaped around their centroid, so the fan covers them exactly.
    for j in range(len(verts)):
        ax, ay = verts[j]
        bx, by = verts[(j + 1) % len(verts)]
        s0 = (ax - cx) * (ys - cy) - (ay - cy) * (xs - cx)
        s1 = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        s2 = (cx - bx) * (ys - by) - (cy - by) * (xs - bx)
        inside = ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))
        mask |= inside
    return mask


def _validate(obj: SceneObject, resolution: int) -> None:
    if obj.size * resolution < MIN_FEATURE_PIXELS:
        raise RasterError(
            f"object of size {obj.size:.4f} spans under {MIN_FEATURE_PIXELS} pixels "
            f"at resolution {resolution}")
    lo, hi = obj.center[0] - obj.size, obj.center[0] + obj.size
    to, bo = obj.center[1] - obj.size, obj.center[1] + obj.size
    if lo < CANVAS_MARGIN or to < CANVAS_MARGIN or hi > 1.0 - CANVAS_MARGIN or bo > 1.0 - CANVAS_MARGIN:
        raise RasterError(f"object at {obj.center} with size {obj.size:.4f} leaves the canvas")
    for c in obj.color:
        if not (0 <= int(c) <= 255):
            raise RasterError(f"color component {c} outside [0, 255]")


def rasterize(objects: list[SceneObject], resolution: int) -> np.ndarray:
    """Render objects onto a black canvas; returns uint8 (res, res, 3)."""
    if resolution < 8:
        raise RasterError("resolution below 8 cannot honor the feature-size floor")
    xs, ys = _pixel_centers(resolution)
    img = np.zeros((resolution, resolution, 3), dtype=np.uint8)
    for obj in objects:
        _validate(obj, resolution)
        mask = _circle_mask(obj, xs, ys) if obj.kind == "circle" else _polygon_mask(obj, xs, ys)
        img[mask] = np.array(obj.color, dtype=np.uint8)
    return img
