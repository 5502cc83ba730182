"""Panel assembly: four rasterized images, one produced by the violator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..seeds import Stream, derive
from .raster import rasterize
from .rules import RuleSpec, get_rule

# How many derived seeds a caller may burn on placement rejections before
# giving up on a panel id entirely.
SEED_ATTEMPTS = 50


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Panel:
    images: np.ndarray            # (4, res, res, 3) uint8
    scenes: tuple                 # the four scene-parameter lists, slot order
    outlier_index: int
    rule: str
    seed: int


def sample_panel(rule, seed: int, resolution: int = 64) -> Panel:
    """Build one panel, fully determined by (rule, seed, resolution).

    The outlier slot comes from its own derived stream, so it carries no
    information about scene content.  Raises PlacementError when the seed's
    draws cannot satisfy the layout constraints; the caller then derives a
    fresh seed.
    """
    spec: RuleSpec = get_rule(rule) if isinstance(rule, str) else rule
    outlier_index = Stream(derive(seed, "slot")).randint(4)
    stream = Stream(derive(seed, "scenes"))
    normals, shared = spec.sampler(stream)
    violating = spec.violator(stream, shared)

    scenes: list = [None] * 4
    scenes[outlier_index] = violating
    for slot, scene in zip((i for i in range(4) if i != outlier_index), normals):
        scenes[slot] = scene
    if not spec.verify(scenes, outlier_index):
        raise GenerationError(f"rule {spec.name!r}: freshly built panel fails its own predicate")

    images = np.stack([rasterize(scene, resolution) for scene in scenes])
    return Panel(images=images, scenes=tuple(scenes), outlier_index=outlier_index,
                 rule=spec.name, seed=seed)
