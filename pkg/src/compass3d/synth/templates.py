"""Object templates: procedural shape families with named functional regions.

Each template is a list of parts (surface samplers with areas) plus region
rules mapping an affordance type to the core point set, evaluated on the
canonical-pose sample before unit-sphere normalization. Confusing pairs
are two families sharing one affordance type; distractor templates declare
no regions at all.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import geometry
from . import shapes

FEATHER_BAND = 0.1       # canonical units
FEATHER_FLOOR = 0.2      # soft value at the outer edge of the band
REGION_MIN_ON_2048 = 32  # minimum core points on a 2048-point sample


@dataclass(frozen=True)
class Part:
    name: str
    area: float
    sampler: Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class ObjectTemplate:
    category: str
    parts: tuple
    # affordance type -> rule(points, part_ids) -> bool core mask
    regions: dict = field(default_factory=dict)
    pair_group: str | None = None

    def part_index(self, name: str) -> int:
        for i, p in enumerate(self.parts):
            if p.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class ConfusingPairSpec:
    id: str
    category_a: str
    category_b: str
    shared_affordance: str
    distractor_pool: tuple


@dataclass
class GeneratedObject:
    category: str
    points: np.ndarray      # unit-sphere canonical pose
    part_ids: np.ndarray
    masks: dict             # affordance type -> soft values in [0, 1]


class RegionTooSmall(ValueError):
    """A region rule selected fewer core points than the floor allows."""


def _box(name, size, center, open_top=False):
    return Part(name, shapes.box_area(size, open_top),
                lambda rng, n, size=size, center=center, ot=open_top:
                shapes.sample_box(rng, n, size, center, open_top=ot))


def _cyl(name, radius, height, center, axis="z", cap_bottom=True, cap_top=True):
    return Part(name, shapes.cylinder_area(radius, height, cap_bottom, cap_top),
                lambda rng, n, r=radius, h=height, c=center, a=axis,
                cb=cap_bottom, ct=cap_top:
                shapes.sample_cylinder(rng, n, r, h, c, a, cb, ct))


def _torus(name, ring_r, tube_r, center, plane, arc=(0.0, 2 * np.pi)):
    return Part(name, shapes.torus_area(ring_r, tube_r, arc[1] - arc[0]),
                lambda rng, n, rr=ring_r, tr=tube_r, c=center, p=plane, a=arc:
                shapes.sample_torus(rng, n, rr, tr, c, p, a[0], a[1]))


def _part_region(template_parts, part_names, extra=None):
    names = set(part_names)

    def rule(points, part_ids, _names=names, _parts=template_parts, _extra=extra):
        idx = {p.name: i for i, p in enumerate(_parts)}
        mask = np.isin(part_ids, [idx[n] for n in _names])
        if _extra is not None:
            mask &= _extra(points)
        return mask

    return rule


def _build_templates() -> dict:
    t: dict[str, ObjectTemplate] = {}

    def add(category, parts, regions=None, pair_group=None):
        parts = tuple(parts)
        rules = {}
        for aff, (names, extra) in (regions or {}).items():
            rules[aff] = _part_region(parts, names, extra)
        t[category] = ObjectTemplate(category, parts, rules, pair_group)

    # -- cut: kitchen knife vs shears ----------------------------------
    add("kitchen_knife",
        [_box("handle", (0.40, 0.10, 0.06), (-0.40, 0.0, 0.0)),
         _box("blade", (0.80, 0.16, 0.015), (0.20, 0.0, 0.0))],
        regions={"cut": (["blade"], lambda p: p[:, 0] > 0.0)},
        pair_group="blade_kitchen")

    add("shears",
        [_box("blade_a", (0.72, 0.07, 0.012), (0.26, 0.05, 0.0)),
         _box("blade_b", (0.72, 0.07, 0.012), (0.26, -0.05, 0.0)),
         _box("grip_a", (0.30, 0.08, 0.03), (-0.22, 0.09, 0.0)),
         _box("grip_b", (0.30, 0.08, 0.03), (-0.22, -0.09, 0.0))],
        regions={"cut": (["blade_a", "blade_b"], lambda p: p[:, 0] > 0.18)},
        pair_group="blade_kitchen")

    # -- cut: hatchet vs saw --------------------------------------------
    add("hatchet",
        [_cyl("handle", 0.045, 1.0, (-0.12, 0.0, 0.0), axis="x"),
         _box("head", (0.26, 0.30, 0.07), (0.45, 0.05, 0.0))],
        regions={"cut": (["head"], lambda p: p[:, 1] > 0.12)},
        pair_group="blade_heavy")

    add("saw",
        [_box("grip", (0.22, 0.20, 0.05), (-0.55, 0.02, 0.0)),
         _box("blade", (0.95, 0.16, 0.01), (0.03, 0.0, 0.0))],
        regions={"cut": (["blade"], lambda p: (p[:, 0] > -0.30) & (p[:, 1] < -0.055))},
        pair_group="blade_heavy")

    # -- contain: mug vs bowl -------------------------------------------
    add("mug",
        [_cyl("wall", 0.28, 0.55, (0.0, 0.0, 0.0), cap_top=False),
         _torus("handle", 0.16, 0.03, (0.30, 0.0, 0.0), "xz",
                arc=(-np.pi / 2, np.pi / 2))],
        regions={"contain": (["wall"], lambda p: p[:, 2] < -0.05)},
        pair_group="vessel_drink")

    add("bowl",
        [Part("shell", shapes.hemisphere_area(0.45),
              lambda rng, n: shapes.sample_hemisphere(rng, n, 0.45, (0.0, 0.0, 0.05)))],
        regions={"contain": (["shell"], lambda p: p[:, 2] < -0.13)},
        pair_group="vessel_drink")

    # -- contain: storage box vs basket ---------------------------------
    add("storage_box",
        [_box("shell", (0.80, 0.50, 0.45), (0.0, 0.0, 0.0), open_top=True)],
        regions={"contain": (["shell"], lambda p: p[:, 2] < -0.10)},
        pair_group="vessel_bulk")

    add("basket",
        [_cyl("shell", 0.40, 0.50, (0.0, 0.0, 0.0), cap_top=False)],
        regions={"contain": (["shell"], lambda p: p[:, 2] < -0.10)},
        pair_group="vessel_bulk")

    # -- pour: kettle vs pitcher -----------------------------------------
    add("kettle",
        [_cyl("body", 0.32, 0.40, (0.0, 0.0, -0.10)),
         _cyl("spout", 0.06, 0.40, (0.42, 0.0, 0.08), axis="x",
              cap_bottom=False, cap_top=False),
         _torus("handle", 0.18, 0.03, (0.0, 0.0, 0.12), "xz", arc=(0.0, np.pi))],
        regions={"pour": (["spout"], lambda p: p[:, 0] > 0.34)},
        pair_group="pourer")

    add("pitcher",
        [_cyl("body", 0.30, 0.60, (0.0, 0.0, 0.0), cap_top=False),
         _box("lip", (0.18, 0.12, 0.04), (0.35, 0.0, 0.29)),
         _torus("handle", 0.17, 0.03, (-0.32, 0.0, 0.02), "xz",
                arc=(np.pi / 2, 3 * np.pi / 2))],
        regions={"pour": (["lip"], None)},
        pair_group="pourer")

    # -- support: chair vs bed -------------------------------------------
    add("chair",
        [_box("seat", (0.50, 0.50, 0.06), (0.0, 0.0, 0.0)),
         _box("backrest", (0.50, 0.05, 0.50), (0.0, -0.245, 0.27)),
         _cyl("leg_a", 0.03, 0.34, (0.21, 0.21, -0.20)),
         _cyl("leg_b", 0.03, 0.34, (-0.21, 0.21, -0.20)),
         _cyl("leg_c", 0.03, 0.34, (0.21, -0.21, -0.20)),
         _cyl("leg_d", 0.03, 0.34, (-0.21, -0.21, -0.20))],
        regions={"support": (["seat"], lambda p: p[:, 2] > 0.029)},
        pair_group="sitting")

    add("bed",
        [_box("slab", (0.95, 0.60, 0.12), (0.0, 0.0, -0.05)),
         _box("headboard", (0.06, 0.60, 0.36), (-0.475, 0.0, 0.10)),
         _cyl("leg_a", 0.035, 0.16, (0.42, 0.25, -0.19)),
         _cyl("leg_b", 0.035, 0.16, (-0.42, 0.25, -0.19)),
         _cyl("leg_c", 0.035, 0.16, (0.42, -0.25, -0.19)),
         _cyl("leg_d", 0.035, 0.16, (-0.42, -0.25, -0.19))],
        regions={"support": (["slab"], lambda p: p[:, 2] > 0.009)},
        pair_group="sitting")

    # -- grasp: frying pan vs suitcase ------------------------------------
    add("frying_pan",
        [_cyl("pan", 0.35, 0.10, (0.0, 0.0, 0.0), cap_top=False),
         _cyl("handle", 0.035, 0.55, (0.62, 0.0, 0.02), axis="x",
              cap_bottom=False)],
        regions={"grasp": (["handle"], lambda p: p[:, 0] > 0.45)},
        pair_group="handled_tool")

    add("suitcase",
        [_box("body", (0.80, 0.25, 0.55), (0.0, 0.0, -0.05)),
         _torus("handle", 0.15, 0.035, (0.0, 0.0, 0.23), "xz", arc=(0.0, np.pi))],
        regions={"grasp": (["handle"], None)},
        pair_group="handled_tool")

    # -- hit: hammer vs mallet ---------------------------------------------
    add("hammer",
        [_cyl("handle", 0.04, 0.75, (0.0, 0.0, -0.18)),
         _cyl("head", 0.09, 0.42, (0.0, 0.0, 0.24), axis="x")],
        regions={"hit": (["head"], lambda p: p[:, 0] > 0.12)},
        pair_group="striker")

    add("mallet",
        [_cyl("handle", 0.04, 0.70, (0.0, 0.0, -0.20)),
         _box("head", (0.40, 0.18, 0.18), (0.0, 0.0, 0.20))],
        regions={"hit": (["head"], lambda p: np.abs(p[:, 0]) > 0.12)},
        pair_group="striker")

    # -- distractors (no affordance regions) -------------------------------
    # (a true sphere cannot stay radius-0.2 connected at 512 points once
    # normalized, so the round distractor is an ellipsoid)
    add("egg", [Part("shell", shapes.ellipsoid_area((0.5, 0.33, 0.3)),
                     lambda rng, n: shapes.sample_ellipsoid(rng, n, (0.5, 0.33, 0.3)))])
    add("block", [_box("body", (0.55, 0.55, 0.55), (0.0, 0.0, 0.0))])
    add("rod", [_cyl("body", 0.05, 1.1, (0.0, 0.0, 0.0))])
    add("board", [_box("body", (0.95, 0.60, 0.04), (0.0, 0.0, 0.0))])
    add("cone", [Part("shell", shapes.cone_area(0.4, 0.8),
                      lambda rng, n: shapes.sample_cone(rng, n, 0.4, 0.8))])
    add("ring", [_torus("body", 0.40, 0.08, (0.0, 0.0, 0.0), "xy")])

    return t


TEMPLATES = _build_templates()

DISTRACTOR_CATEGORIES = ("egg", "block", "rod", "board", "cone", "ring")

CONFUSING_PAIRS = (
    ConfusingPairSpec("blade_kitchen", "kitchen_knife", "shears", "cut", DISTRACTOR_CATEGORIES),
    ConfusingPairSpec("blade_heavy", "hatchet", "saw", "cut", DISTRACTOR_CATEGORIES),
    ConfusingPairSpec("vessel_drink", "mug", "bowl", "contain", DISTRACTOR_CATEGORIES),
    ConfusingPairSpec("vessel_bulk", "storage_box", "basket", "contain", DISTRACTOR_CATEGORIES),
    ConfusingPairSpec("pourer", "kettle", "pitcher", "pour", DISTRACTOR_CATEGORIES),
    ConfusingPairSpec("sitting", "chair", "bed", "support", DISTRACTOR_CATEGORIES),
    ConfusingPairSpec("handled_tool", "frying_pan", "suitcase", "grasp", DISTRACTOR_CATEGORIES),
    ConfusingPairSpec("striker", "hammer", "mallet", "hit", DISTRACTOR_CATEGORIES),
)

AFFORDANCE_TYPES = ("cut", "contain", "pour", "support", "grasp", "hit")


def derive_seed(master_seed: int, *tokens) -> int:
    """Stable child seed from a master seed and arbitrary string tokens."""
    text = ":".join([str(master_seed)] + [str(t) for t in tokens])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _allocate(areas: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder allocation of n samples proportional to areas."""
    share = areas / areas.sum() * n
    counts = np.floor(share).astype(np.int64)
    rem = n - counts.sum()
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts


def _feather(points: np.ndarray, core: np.ndarray, hard: bool) -> np.ndarray:
    """Soft mask: core 1.0, linear falloff to FEATHER_FLOOR over the band."""
    values = np.zeros(points.shape[0])
    values[core] = 1.0
    if hard or core.all() or not core.any():
        return values
    outside = np.flatnonzero(~core)
    _, dist = geometry.knn(points[core], points[outside], 1)
    d = dist[:, 0]
    band = d <= FEATHER_BAND
    values[outside[band]] = 1.0 - (1.0 - FEATHER_FLOOR) * (d[band] / FEATHER_BAND)
    return values


def generate_object(template: ObjectTemplate, n_points: int, seed: int,
                    hard_masks: bool = False,
                    ensure_connected_r: float | None = None) -> GeneratedObject:
    """Sample a template's surface and its affordance masks.

    Points come out in canonical pose, normalized to the unit sphere.
    Masks are computed on the canonical sample before normalization so the
    feather band is in canonical units. When `ensure_connected_r` is set,
    the draw is retried (bounded, seeded) until the normalized cloud forms
    a single radius-`r` component.
    """
    if n_points < 64:
        raise ValueError("n_points must be >= 64")
    min_core = max(4, (REGION_MIN_ON_2048 * n_points) // 2048)
    areas = np.array([p.area for p in template.parts])
    counts = _allocate(areas, n_points)
    for attempt in range(32):
        rng = np.random.default_rng(derive_seed(seed, template.category, attempt))
        pts_parts, ids_parts = [], []
        for pi, (part, cnt) in enumerate(zip(template.parts, counts)):
            if cnt == 0:
                continue
            pts_parts.append(part.sampler(rng, int(cnt)))
            ids_parts.append(np.full(int(cnt), pi, dtype=np.int64))
        raw = np.concatenate(pts_parts)
        part_ids = np.concatenate(ids_parts)
        masks = {}
        for aff, rule in template.regions.items():
            core = rule(raw, part_ids)
            if core.sum() < min_core:
                raise RegionTooSmall(
                    f"{template.category}/{aff}: {int(core.sum())} core points "
                    f"< floor {min_core} at n={n_points}")
            masks[aff] = _feather(raw, core, hard_masks)
        normalized = geometry.normalize_unit_sphere(raw)
        if ensure_connected_r is not None:
            labels = geometry.radius_connected_components(
                normalized.points, ensure_connected_r)
            if labels.max() != 0:
                continue
        return GeneratedObject(template.category, normalized.points, part_ids, masks)
    raise RuntimeError(
        f"{template.category}: no connected sample found in 32 attempts "
        f"(n={n_points}, r={ensure_connected_r})")
