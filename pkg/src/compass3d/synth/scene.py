"""Scene composition: confusable pair + distractors on slot or circle layouts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import geometry
from . import templates

# 4 slots on a square; adjacent slot spacing 3.0 units, so two unit-sphere
# objects keep a surface gap well above the component radius
SLOT_OFFSETS = (
    (-1.5, 0.0, -1.5),
    (-1.5, 0.0, 1.5),
    (1.5, 0.0, -1.5),
    (1.5, 0.0, 1.5),
)
CIRCLE_RADIUS = 2.0
# chord >= 2.5 between any two objects: 2 R sin(sep/2) >= 2.5 -> sep >= 1.3503
MIN_ANGLE_SEP = 1.4
MIN_CENTROID_DIST = 2.5


@dataclass
class PlacedObject:
    category: str
    slot: int               # slot index, or -1 for circle layouts
    angle: float            # circle angle in radians, or nan for slots
    offset: np.ndarray      # translation applied after unit-sphere normalization
    start: int              # first point index in the scene array
    stop: int               # one past the last point index
    masks: dict             # affordance -> per-object soft mask


@dataclass
class Scene:
    scene_id: str
    layout: str
    points: np.ndarray      # (N, 3) float64
    labels: np.ndarray      # (N,) int64 instance labels
    objects: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.objects)

    def manifest(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "layout": self.layout,
            "n_points": int(self.points.shape[0]),
            "objects": [
                {
                    "category": o.category,
                    "slot": o.slot,
                    "angle": None if math.isnan(o.angle) else o.angle,
                    "offset": [float(v) for v in o.offset],
                    "n_points": o.stop - o.start,
                }
                for o in self.objects
            ],
        }


def _circle_angles(rng: np.random.Generator, k: int) -> np.ndarray:
    """Seeded angles with all circular gaps >= MIN_ANGLE_SEP.

    Constructive: minimum gaps plus Dirichlet-distributed slack, then a
    random rotation and a random assignment to objects.
    """
    slack = 2 * math.pi - k * MIN_ANGLE_SEP
    if slack < 0:
        raise RuntimeError(f"cannot place {k} objects on the circle")
    gaps = MIN_ANGLE_SEP + rng.dirichlet(np.ones(k)) * slack
    start = rng.uniform(0.0, 2 * math.pi)
    ordered = (start + np.cumsum(gaps)) % (2 * math.pi)
    return ordered[rng.permutation(k)]


def compose_scene(pair: templates.ConfusingPairSpec, n_distractors: int,
                  layout: str, seed: int, scene_id: str = "scene",
                  n_points_per_object: int = 512,
                  component_radius: float = 0.2,
                  hard_masks: bool = False) -> Scene:
    """Generate, normalize and place the pair plus distractors.

    Objects are placed at a seeded slot permutation or at seeded circle
    angles with a minimum separation; either way all pairwise centroid
    distances are >= 2.5 units so instance recovery by radius-graph
    components is guaranteed.
    """
    if n_distractors not in (0, 1, 2):
        raise ValueError("n_distractors must be 0, 1 or 2")
    if layout not in ("slots", "circle"):
        raise ValueError(f"unknown layout {layout!r}")
    rng = np.random.default_rng(templates.derive_seed(seed, scene_id, "compose"))
    pool = list(pair.distractor_pool)
    picks = rng.permutation(len(pool))[:n_distractors]
    categories = [pair.category_a, pair.category_b] + [pool[i] for i in picks]
    k = len(categories)

    if layout == "slots":
        perm = rng.permutation(len(SLOT_OFFSETS))[:k]
        slots = [int(s) for s in perm]
        offsets = [np.array(SLOT_OFFSETS[s]) for s in slots]
        angles = [math.nan] * k
    else:
        angs = _circle_angles(rng, k)
        slots = [-1] * k
        offsets = [np.array([CIRCLE_RADIUS * math.cos(a), 0.0,
                             CIRCLE_RADIUS * math.sin(a)]) for a in angs]
        angles = [float(a) for a in angs]

    for i in range(k):
        for j in range(i + 1, k):
            assert np.linalg.norm(offsets[i] - offsets[j]) >= MIN_CENTROID_DIST - 1e-9

    pts_list, objects = [], []
    cursor = 0
    for i, cat in enumerate(categories):
        obj = templates.generate_object(
            templates.TEMPLATES[cat], n_points_per_object,
            templates.derive_seed(seed, scene_id, "object", i),
            hard_masks=hard_masks, ensure_connected_r=component_radius)
        pts_list.append(obj.points + offsets[i][None, :])
        objects.append(PlacedObject(
            category=cat, slot=slots[i], angle=angles[i], offset=offsets[i],
            start=cursor, stop=cursor + n_points_per_object, masks=obj.masks))
        cursor += n_points_per_object

    points = np.concatenate(pts_list)
    labels = np.repeat(np.arange(k, dtype=np.int64), n_points_per_object)
    return Scene(scene_id=scene_id, layout=layout, points=points,
                 labels=labels, objects=objects)


def ground_truth_mask(scene: Scene, target) -> np.ndarray:
    """Per-point ground truth for one query on this scene.

    `target` is None for negative queries (all zeros) or a dict with
    object_index and affordance.
    """
    values = np.zeros(scene.points.shape[0])
    if target is None:
        return values
    obj = scene.objects[target["object_index"]]
    if target["affordance"] not in obj.masks:
        raise KeyError(
            f"object {obj.category} declares no {target['affordance']!r} region")
    values[obj.start:obj.stop] = obj.masks[target["affordance"]]
    return values
