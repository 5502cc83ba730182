"""Scene parameters: the objects a panel image is built from.

Coordinates are canvas fractions in [0, 1] (x right, y down); `size` is the
circumradius of the shape as a canvas fraction.  Shapes are closed convex or
star-shaped outlines: discs, squares, a fixed scalene triangle (chiral, so
flips are visible at any resolution), and 5-vertex "rough" polygons whose
per-vertex radii come along as explicit parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

SHAPE_KINDS = ("circle", "square", "triangle", "polygon")

# Scalene pointer triangle: no rotational or mirror symmetry, so both
# rotations and flips change the rendered outline.
_TRIANGLE_TEMPLATE = ((0.5 * math.pi, 1.0), (7.0 / 6.0 * math.pi, 0.78), (11.0 / 6.0 * math.pi, 0.55))
_SQUARE_TEMPLATE = tuple((math.pi / 4.0 + j * math.pi / 2.0, 1.0) for j in range(4))

POLYGON_VERTICES = 5


@dataclass(frozen=True)
class SceneObject:
    kind: str
    center: tuple[float, float]
    size: float
    rotation: float = 0.0
    flip: bool = False
    color: tuple[int, int, int] = (255, 255, 255)
    # polygon-only appearance parameters: per-vertex radius fractions and
    # angular offsets relative to a regular spacing
    poly_radii: tuple[float, ...] = field(default=())
    poly_jitter: tuple[float, ...] = field(default=())

    def vertices(self) -> list[tuple[float, float]]:
        """Outline vertices in canvas coordinates (empty for discs)."""
        if self.kind == "circle":
            return []
        if self.kind == "square":
            template = _SQUARE_TEMPLATE
        elif self.kind == "triangle":
            template = _TRIANGLE_TEMPLATE
        elif self.kind == "polygon":
            if len(self.poly_radii) != POLYGON_VERTICES or len(self.poly_jitter) != POLYGON_VERTICES:
                raise ValueError("polygon object is missing its vertex parameters")
            step = 2.0 * math.pi / POLYGON_VERTICES
            template = tuple((j * step + self.poly_jitter[j], self.poly_radii[j])
                             for j in range(POLYGON_VERTICES))
        else:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        pts = []
        for angle, rfrac in template:
            x = math.cos(angle) * rfrac
            y = math.sin(angle) * rfrac
            if self.flip:
                x = -x
            ca, sa = math.cos(self.rotation), math.sin(self.rotation)
            xr = x * ca - y * sa
            yr = x * sa + y * ca
            pts.append((self.center[0] + self.size * xr, self.center[1] + self.size * yr))
        return pts


def sample_polygon_params(stream) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Random radii/jitter for the rough-polygon kind."""
    step = 2.0 * math.pi / POLYGON_VERTICES
    radii = tuple(stream.uniform(0.65, 1.0) for _ in range(POLYGON_VERTICES))
    jitter = tuple(stream.uniform(-0.25 * step, 0.25 * step) for _ in range(POLYGON_VERTICES))
    return radii, jitter
