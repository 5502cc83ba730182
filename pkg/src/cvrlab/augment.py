"""Weak and strong augmentation for contrastive views.

The weak path applies, under a single per-panel probability draw, a joint
quarter-turn rotation, hue shift, and one-axis circular translation; the
strong path reuses the same weak view (same seed, same parameters) and masks
a block subset to black.  All parameters are drawn once per panel and applied
to its four images alike, so the odd-one-out label survives augmentation.

Everything here is a pure function of (images, seed, config).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .seeds import Stream, derive


@dataclass(frozen=True)
class AugmentConfig:
    p_w: float = 0.5
    hue_shift_max: float = 36.0      # degrees
    shift_max: float = 0.1           # fraction of the canvas, one axis
    sda_grid: int = 8
    sda_mask_ratio: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.p_w <= 1.0:
            raise ValueError(f"p_w must lie in [0, 1], got {self.p_w}")
        if self.hue_shift_max < 0.0:
            raise ValueError("hue_shift_max must be nonnegative")
        if not 0.0 <= self.shift_max <= 0.5:
            raise ValueError(f"shift_max must lie in [0, 0.5], got {self.shift_max}")
        if int(self.sda_grid) != self.sda_grid or self.sda_grid < 1:
            raise ValueError(f"sda_grid must be a positive integer, got {self.sda_grid}")
        if not 0.0 <= self.sda_mask_ratio < 1.0:
            raise ValueError(f"sda_mask_ratio must lie in [0, 1), got {self.sda_mask_ratio}")


def _rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    span = maxc - minc
    v = maxc
    s = np.where(maxc > 0.0, span / np.maximum(maxc, 1e-20), 0.0)
    safe = np.maximum(span, 1e-20)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span > 0.0, (h / 6.0) % 1.0, 0.0)
    return h, s, v


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def _shift_hue(images: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate hue; gray pixels (saturation zero) come back bit-identical."""
    if degrees == 0.0:
        return images
    scaled = images.astype(np.float64) / 255.0
    h, s, v = _rgb_to_hsv(scaled)
    h = (h + degrees / 360.0) % 1.0
    out = _hsv_to_rgb(h, s, v)
    return np.clip(np.rint(out * 255.0), 0.0, 255.0).astype(np.uint8)


def _weak_parameters(stream: Stream, cfg: AugmentConfig):
    """One joint draw per panel; None means the weak branch did not fire."""
    if stream.uniform() >= cfg.p_w:
        return None
    quarter_turns = 1 + stream.randint(3)
    hue = stream.uniform(-cfg.hue_shift_max, cfg.hue_shift_max)
    axis = stream.randint(2)
    shift_frac = stream.uniform(-cfg.shift_max, cfg.shift_max)
    return quarter_turns, hue, axis, shift_frac


def weak_images(images: np.ndarray, seed: int, cfg: AugmentConfig) -> np.ndarray:
    """Weak view of one panel's (4, H, W, 3) uint8 image stack."""
    if images.ndim != 4 or images.shape[0] != 4 or images.dtype != np.uint8:
        raise ValueError(f"expected (4, H, W, 3) uint8 panel images, got {images.dtype} {images.shape}")
    params = _weak_parameters(Stream(derive(seed, "weak")), cfg)
    if params is None:
        return images
    quarter_turns, hue, axis, shift_frac = params
    out = np.rot90(images, k=quarter_turns, axes=(1, 2))
    out = _shift_hue(out, hue)
    pixels = int(round(shift_frac * images.shape[1 + axis]))
    if pixels != 0:
        out = np.roll(out, pixels, axis=1 + axis)
    return np.ascontiguousarray(out)


def _block_edges(extent: int, grid: int) -> list[int]:
    # equal blocks when the grid divides the extent; otherwise the last
    # row/column of blocks absorbs the remainder
    base = extent // grid
    if base == 0:
        raise ValueError(f"grid {grid} exceeds image extent {extent}")
    edges = [i * base for i in range(grid)]
    edges.append(extent)
    return edges


def mask_blocks(images: np.ndarray, seed: int, cfg: AugmentConfig) -> np.ndarray:
    """Black out one uniformly drawn block subset, shared by all four images."""
    grid = int(cfg.sda_grid)
    total = grid * grid
    k = int(cfg.sda_mask_ratio * total)
    if k == 0:
        return images
    rows = _block_edges(images.shape[1], grid)
    cols = _block_edges(images.shape[2], grid)
    chosen = Stream(derive(seed, "mask")).sample_indices(total, k)
    out = images.copy()
    for block in chosen:
        r, c = divmod(block, grid)
        out[:, rows[r]:rows[r + 1], cols[c]:cols[c + 1], :] = 0
    return out


def strong_images(images: np.ndarray, seed: int, cfg: AugmentConfig) -> np.ndarray:
    """Strong view: the same seed's weak view with masked blocks on top."""
    return mask_blocks(weak_images(images, seed, cfg), seed, cfg)


def weak_augment(panel, seed: int, cfg: AugmentConfig):
    """Panel-level weak view; scene parameters describe the original render."""
    return dataclasses.replace(panel, images=weak_images(panel.images, seed, cfg))


def strong_augment(panel, seed: int, cfg: AugmentConfig):
    return dataclasses.replace(panel, images=strong_images(panel.images, seed, cfg))
