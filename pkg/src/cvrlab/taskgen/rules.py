"""The rule catalog: 9 elementary rules plus 10 pairwise compositions.

A rule constrains one or two attributes.  Its sampler draws panel-shared
values for the constrained attributes and builds three conforming scenes;
its violator builds a fourth scene that breaks exactly one constrained
attribute by a fixed margin while every nuisance attribute is resampled the
same way the normal scenes resample theirs.

Margins (documented in docs/rules.md):
  * SIZE and POSITION differ by at least 25% of the admissible range,
  * SHAPE and COUNT move to a different category,
  * COLOR moves at least 2 bins away in Chebyshev distance over bin space,
  * ROTATION turns at least 90 degrees,
  * FLIP, INSIDE and CONTACT toggle.

Conformance checking runs on scene parameters, never on pixels: the three
normal scenes must agree exactly on every constrained attribute and the
outlier must break exactly one of them by its margin.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

from .scene import SHAPE_KINDS, SceneObject, sample_polygon_params

ATTRIBUTES = ("shape", "position", "size", "color", "rotation", "flip", "count", "inside", "contact")
PAIR_POOL = ("size", "position", "count", "shape", "color")

# Color values are quantized to 8 bins per channel; bin b renders as 16+32b.
COLOR_BINS = 8
COLOR_BASE = 16
COLOR_STEP = 32
COLOR_MIN_PEAK_BIN = 2     # at least one channel this bright, so shapes never vanish into the background
COLOR_MARGIN_BINS = 2

# Admissible size ranges shrink when a rule pins positions (objects must fit
# anywhere in the position box) or adds objects (several must fit at once).
SIZE_RANGE_BASE = (0.08, 0.40)
SIZE_RANGE_POSITIONED = (0.08, 0.20)
SIZE_RANGE_CROWDED = (0.07, 0.13)
SIZE_RANGE_CROWDED_POSITIONED = (0.07, 0.11)
SIZE_MARGIN_FRACTION = 0.25

POSITION_BOX = (0.22, 0.78)
POSITION_MARGIN = SIZE_MARGIN_FRACTION * (POSITION_BOX[1] - POSITION_BOX[0])

MAX_COUNT = 4
ROTATION_MARGIN = math.pi / 2.0

# Geometry for the two-object relation rules (all discs).
CONTAINER_RANGE = (0.22, 0.30)
CONTAINEE_RANGE = (0.07, 0.11)
INSIDE_GAP = 0.02          # containment clearance: d <= R - r - gap
OUTSIDE_GAP = 0.04         # separation when not contained: d >= R + r + gap
CONTACT_RADIUS_RANGE = (0.09, 0.15)
CONTACT_APART_GAP = 0.05
CONTACT_TOUCH_TOL = 1e-6

PLACE_GAP = 0.02
RETRY_LIMIT = 100
_TOL = 1e-9


class PlacementError(RuntimeError):
    """Object placement could not satisfy the layout constraints."""


def size_range_for(attrs: tuple[str, ...]) -> tuple[float, float]:
    positioned = "position" in attrs
    crowded = "count" in attrs
    if positioned and crowded:
        return SIZE_RANGE_CROWDED_POSITIONED
    if crowded:
        return SIZE_RANGE_CROWDED
    if positioned:
        return SIZE_RANGE_POSITIONED
    return SIZE_RANGE_BASE


def size_margin_for(attrs: tuple[str, ...]) -> float:
    lo, hi = size_range_for(attrs)
    return SIZE_MARGIN_FRACTION * (hi - lo)


# ---------------------------------------------------------------------------
# shared-value sampling and violation, per attribute


def _sample_color_bins(stream) -> tuple[int, int, int]:
    for _ in range(RETRY_LIMIT):
        bins = (stream.randint(COLOR_BINS), stream.randint(COLOR_BINS), stream.randint(COLOR_BINS))
        if max(bins) >= COLOR_MIN_PEAK_BIN:
            return bins
    raise PlacementError("could not draw a visible color")


def _violate_color_bins(stream, bins) -> tuple[int, int, int]:
    for _ in range(RETRY_LIMIT):
        cand = (stream.randint(COLOR_BINS), stream.randint(COLOR_BINS), stream.randint(COLOR_BINS))
        if max(cand) >= COLOR_MIN_PEAK_BIN and _bin_distance(cand, bins) >= COLOR_MARGIN_BINS:
            return cand
    raise PlacementError("could not draw a contrasting color")


def _bin_distance(a, b) -> int:
    return max(abs(x - y) for x, y in zip(a, b))


def bins_to_rgb(bins) -> tuple[int, int, int]:
    return tuple(COLOR_BASE + COLOR_STEP * b for b in bins)


def rgb_to_bins(rgb) -> tuple[int, int, int]:
    return tuple((c - COLOR_BASE) // COLOR_STEP for c in rgb)


def _sample_layout(stream, attrs) -> tuple[tuple[float, float], ...]:
    length = MAX_COUNT if "count" in attrs else 1
    spacing = 2.0 * size_range_for(attrs)[1] + PLACE_GAP
    lo, hi = POSITION_BOX
    for _ in range(RETRY_LIMIT):
        pts = [(stream.uniform(lo, hi), stream.uniform(lo, hi)) for _ in range(length)]
        ok = all(math.dist(pts[i], pts[j]) >= spacing
                 for i in range(length) for j in range(i + 1, length))
        if ok:
            return tuple(pts)
    raise PlacementError("could not draw a spaced layout")


def _violate_layout(stream, layout) -> tuple[tuple[float, float], ...]:
    lo, hi = POSITION_BOX
    for _ in range(RETRY_LIMIT):
        ang = stream.uniform(0.0, 2.0 * math.pi)
        mag = stream.uniform(POSITION_MARGIN, 2.0 * POSITION_MARGIN)
        off = (mag * math.cos(ang), mag * math.sin(ang))
        moved = tuple((x + off[0], y + off[1]) for x, y in layout)
        if all(lo <= x <= hi and lo <= y <= hi for x, y in moved):
            return moved
    raise PlacementError("no in-box displacement for this layout")


def _sample_shared(stream, attr, attrs):
    if attr == "shape":
        return stream.choice(SHAPE_KINDS)
    if attr == "position":
        return _sample_layout(stream, attrs)
    if attr == "size":
        return stream.uniform(*size_range_for(attrs))
    if attr == "color":
        return _sample_color_bins(stream)
    if attr == "rotation":
        return stream.uniform(0.0, 2.0 * math.pi)
    if attr == "flip":
        return stream.randint(2) == 1
    if attr == "count":
        return 1 + stream.randint(MAX_COUNT)
    raise ValueError(f"unknown attribute {attr!r}")


def _violate_shared(stream, attr, attrs, value):
    if attr == "shape":
        return stream.choice([k for k in SHAPE_KINDS if k != value])
    if attr == "position":
        return _violate_layout(stream, value)
    if attr == "size":
        lo, hi = size_range_for(attrs)
        margin = size_margin_for(attrs)
        for _ in range(RETRY_LIMIT):
            cand = stream.uniform(lo, hi)
            if abs(cand - value) >= margin:
                return cand
        raise PlacementError("could not draw a contrasting size")
    if attr == "color":
        return _violate_color_bins(stream, value)
    if attr == "rotation":
        return (value + stream.uniform(ROTATION_MARGIN, 2.0 * math.pi - ROTATION_MARGIN)) % (2.0 * math.pi)
    if attr == "flip":
        return not value
    if attr == "count":
        return stream.choice([n for n in range(1, MAX_COUNT + 1) if n != value])
    raise ValueError(f"unknown attribute {attr!r}")


# ---------------------------------------------------------------------------
# scene construction

# Rules about rotation or flips render a fixed chiral shape and freeze the
# other pose attribute, otherwise the constrained one would be unreadable
# (a rotated disc looks like the disc) or confounded.
_POSE_FREEZES = {
    "rotation": {"shape": "triangle", "flip": False},
    "flip": {"shape": "triangle", "rotation": 0.0},
}


def _place_free(stream, sizes: list[float]) -> list[tuple[float, float]]:
    centers: list[tuple[float, float]] = []
    for idx, s in enumerate(sizes):
        lo, hi = s + PLACE_GAP, 1.0 - s - PLACE_GAP
        if lo >= hi:
            raise PlacementError(f"size {s:.3f} cannot fit the canvas")
        for _ in range(RETRY_LIMIT):
            cand = (stream.uniform(lo, hi), stream.uniform(lo, hi))
            if all(math.dist(cand, c) >= s + sizes[j] + PLACE_GAP for j, c in enumerate(centers)):
                centers.append(cand)
                break
        else:
            raise PlacementError(f"no room for object {idx + 1} of {len(sizes)}")
    return centers


def _build_attribute_scene(stream, attrs, values) -> list[SceneObject]:
    fixed = {}
    for attr in attrs:
        fixed.update(_POSE_FREEZES.get(attr, {}))
    fixed.update(values)

    count = fixed.get("count", 1)
    srange = size_range_for(attrs)

    kinds = [fixed["shape"]] * count if "shape" in fixed else [stream.choice(SHAPE_KINDS) for _ in range(count)]
    sizes = [fixed["size"]] * count if "size" in fixed else [stream.uniform(*srange) for _ in range(count)]
    if "color" in fixed:
        colors = [bins_to_rgb(fixed["color"])] * count
    else:
        colors = [bins_to_rgb(_sample_color_bins(stream)) for _ in range(count)]
    rotations = ([fixed["rotation"]] * count if "rotation" in fixed
                 else [stream.uniform(0.0, 2.0 * math.pi) for _ in range(count)])
    flips = [fixed["flip"]] * count if "flip" in fixed else [stream.randint(2) == 1 for _ in range(count)]
    poly = [sample_polygon_params(stream) if k == "polygon" else ((), ()) for k in kinds]

    if "position" in fixed:
        centers = list(fixed["position"][:count])
    else:
        centers = _place_free(stream, sizes)

    return [SceneObject(kind=kinds[i], center=centers[i], size=sizes[i], rotation=rotations[i],
                        flip=flips[i], color=colors[i], poly_radii=poly[i][0], poly_jitter=poly[i][1])
            for i in range(count)]


def _distinct_color_pair(stream) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    first = _sample_color_bins(stream)
    for _ in range(RETRY_LIMIT):
        second = _sample_color_bins(stream)
        if _bin_distance(second, first) >= 1:
            return bins_to_rgb(first), bins_to_rgb(second)
    raise PlacementError("could not draw two distinct colors")


def _build_inside_scene(stream, contained: bool) -> list[SceneObject]:
    big = stream.uniform(*CONTAINER_RANGE)
    small = stream.uniform(*CONTAINEE_RANGE)
    color_big, color_small = _distinct_color_pair(stream)
    cx = stream.uniform(big + PLACE_GAP, 1.0 - big - PLACE_GAP)
    cy = stream.uniform(big + PLACE_GAP, 1.0 - big - PLACE_GAP)
    if contained:
        ang = stream.uniform(0.0, 2.0 * math.pi)
        d = stream.uniform(0.0, big - small - INSIDE_GAP)
        ex, ey = cx + d * math.cos(ang), cy + d * math.sin(ang)
    else:
        lo, hi = small + PLACE_GAP, 1.0 - small - PLACE_GAP
        for _ in range(RETRY_LIMIT):
            ex, ey = stream.uniform(lo, hi), stream.uniform(lo, hi)
            if math.dist((ex, ey), (cx, cy)) >= big + small + OUTSIDE_GAP:
                break
        else:
            raise PlacementError("no room outside the container")
    # containee second, so it overdraws the container and stays visible
    return [SceneObject(kind="circle", center=(cx, cy), size=big, color=color_big),
            SceneObject(kind="circle", center=(ex, ey), size=small, color=color_small)]


def _build_contact_scene(stream, touching: bool) -> list[SceneObject]:
    r1 = stream.uniform(*CONTACT_RADIUS_RANGE)
    r2 = stream.uniform(*CONTACT_RADIUS_RANGE)
    color1, color2 = _distinct_color_pair(stream)
    lo1, hi1 = r1 + PLACE_GAP, 1.0 - r1 - PLACE_GAP
    lo2, hi2 = r2 + PLACE_GAP, 1.0 - r2 - PLACE_GAP
    for _ in range(RETRY_LIMIT):
        c1 = (stream.uniform(lo1, hi1), stream.uniform(lo1, hi1))
        if touching:
            ang = stream.uniform(0.0, 2.0 * math.pi)
            d = r1 + r2
            c2 = (c1[0] + d * math.cos(ang), c1[1] + d * math.sin(ang))
            if lo2 <= c2[0] <= hi2 and lo2 <= c2[1] <= hi2:
                break
        else:
            c2 = (stream.uniform(lo2, hi2), stream.uniform(lo2, hi2))
            if math.dist(c1, c2) >= r1 + r2 + CONTACT_APART_GAP:
                break
    else:
        raise PlacementError("could not place the circle pair")
    return [SceneObject(kind="circle", center=c1, size=r1, color=color1),
            SceneObject(kind="circle", center=c2, size=r2, color=color2)]


_RELATION_BUILDERS = {"inside": _build_inside_scene, "contact": _build_contact_scene}


# ---------------------------------------------------------------------------
# conformance: readings, agreement, refutation


def _common(values, tol=None):
    """The shared value of a per-object list, or None if the objects disagree."""
    first = values[0]
    for v in values[1:]:
        if tol is None:
            if v != first:
                return None
        elif abs(v - first) > tol:
            return None
    return first


def _circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def _read_relation(scene, which: str):
    if len(scene) != 2 or any(o.kind != "circle" for o in scene):
        return None
    a, b = sorted(scene, key=lambda o: -o.size)
    d = math.dist(a.center, b.center)
    if which == "inside":
        if d <= a.size - b.size - INSIDE_GAP + _TOL:
            return True
        if d >= a.size + b.size + OUTSIDE_GAP - _TOL:
            return False
        return None
    if abs(d - (a.size + b.size)) <= CONTACT_TOUCH_TOL:
        return True
    if d >= a.size + b.size + CONTACT_APART_GAP - _TOL:
        return False
    return None


def read_attribute(scene: list[SceneObject], attr: str):
    """Extract a scene's reading of one attribute; None when ill-defined."""
    if attr in ("inside", "contact"):
        return _read_relation(scene, attr)
    if not scene:
        return None
    if attr == "count":
        return len(scene)
    if attr == "position":
        return tuple(o.center for o in scene)
    if attr == "shape":
        return _common([o.kind for o in scene])
    if attr == "size":
        return _common([o.size for o in scene], tol=_TOL)
    if attr == "color":
        rgb = _common([o.color for o in scene])
        return None if rgb is None else rgb_to_bins(rgb)
    if attr == "rotation":
        vals = [o.rotation for o in scene]
        return vals[0] if all(_circular_distance(v, vals[0]) <= _TOL for v in vals) else None
    if attr == "flip":
        return _common([o.flip for o in scene])
    raise ValueError(f"unknown attribute {attr!r}")


def _agrees(attr, reading, shared, attrs) -> bool:
    if reading is None or shared is None:
        return False
    if attr == "position":
        # Layouts are compared over the common prefix: composed count rules
        # reuse one shared layout and an image with k objects takes its
        # first k slots.
        n = min(len(reading), len(shared))
        return all(math.dist(reading[i], shared[i]) <= _TOL for i in range(n))
    if attr == "size":
        return abs(reading - shared) <= _TOL
    if attr == "rotation":
        return _circular_distance(reading, shared) <= _TOL
    return reading == shared


def _refutes(attr, reading, shared, attrs) -> bool:
    if reading is None or shared is None:
        return False
    if attr == "position":
        n = min(len(reading), len(shared))
        margin = POSITION_MARGIN - _TOL
        return n > 0 and all(math.dist(reading[i], shared[i]) >= margin for i in range(n))
    if attr == "size":
        return abs(reading - shared) >= size_margin_for(attrs) - _TOL
    if attr == "rotation":
        return _circular_distance(reading, shared) >= ROTATION_MARGIN - _TOL
    if attr == "color":
        return _bin_distance(reading, shared) >= COLOR_MARGIN_BINS
    return reading != shared


# ---------------------------------------------------------------------------
# the catalog


@dataclass(frozen=True)
class RuleSpec:
    """One catalog entry; `sampler` and `violator` advance a shared stream."""

    name: str
    attributes: tuple[str, ...]
    arity: int
    sampler: Callable  # (stream) -> (three conforming scenes, shared values)
    violator: Callable  # (stream, shared values) -> violating scene

    def verify(self, scenes, outlier_index: int) -> bool:
        """Check a full panel against this rule, from scene parameters alone.

        The three non-outlier scenes must agree exactly on every constrained
        attribute, and the outlier must break exactly one of them by its
        margin while conforming on the rest.
        """
        if not (0 <= outlier_index < 4 and len(scenes) == 4):
            return False
        normals = [scenes[i] for i in range(4) if i != outlier_index]
        shared = {}
        for attr in self.attributes:
            readings = [read_attribute(s, attr) for s in normals]
            if any(r is None for r in readings):
                return False
            if not all(_agrees(attr, r, readings[0], self.attributes) for r in readings[1:]):
                return False
            shared[attr] = readings[0]
        broken = conforming = 0
        for attr in self.attributes:
            reading = read_attribute(scenes[outlier_index], attr)
            if _refutes(attr, reading, shared[attr], self.attributes):
                broken += 1
            elif _agrees(attr, reading, shared[attr], self.attributes):
                conforming += 1
        return broken == 1 and broken + conforming == len(self.attributes)


def _make_attribute_rule(attrs: tuple[str, ...]) -> RuleSpec:
    name = "+".join(attrs)

    def sampler(stream):
        shared = {a: _sample_shared(stream, a, attrs) for a in attrs}
        scenes = [_build_attribute_scene(stream, attrs, shared) for _ in range(3)]
        return scenes, shared

    def violator(stream, shared):
        target = attrs[stream.randint(len(attrs))] if len(attrs) > 1 else attrs[0]
        values = dict(shared)
        values[target] = _violate_shared(stream, target, attrs, shared[target])
        return _build_attribute_scene(stream, attrs, values)

    return RuleSpec(name=name, attributes=attrs, arity=len(attrs), sampler=sampler, violator=violator)


def _make_relation_rule(attr: str) -> RuleSpec:
    build = _RELATION_BUILDERS[attr]

    def sampler(stream):
        held = stream.randint(2) == 1
        scenes = [build(stream, held) for _ in range(3)]
        return scenes, {attr: held}

    def violator(stream, shared):
        return build(stream, not shared[attr])

    return RuleSpec(name=attr, attributes=(attr,), arity=1, sampler=sampler, violator=violator)


def rule_catalog() -> list[RuleSpec]:
    rules = []
    for attr in ("shape", "position", "size", "color", "rotation", "flip", "count"):
        rules.append(_make_attribute_rule((attr,)))
    for attr in ("inside", "contact"):
        rules.append(_make_relation_rule(attr))
    for a, b in itertools.combinations(PAIR_POOL, 2):
        rules.append(_make_attribute_rule((a, b)))
    return rules


_CATALOG = {rule.name: rule for rule in rule_catalog()}


def rule_names() -> list[str]:
    return list(_CATALOG)


def get_rule(name: str) -> RuleSpec:
    try:
        return _CATALOG[name]
    except KeyError:
        known = ", ".join(_CATALOG)
        raise ValueError(f"unknown rule {name!r}; catalog has: {known}") from None
