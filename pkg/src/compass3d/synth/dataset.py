"""Dataset builder: scenes, query-dependent masks, JSONL splits, manifest.

Layout under the output directory:

    manifest.json
    scenes/<scene_id>.cmps
    masks/<query_id>.cmpm          (positive queries only)
    queries/train.jsonl
    queries/test_seen.jsonl
    queries/test_unseen.jsonl

Everything derives from (config, seed): scene seeds are hashes of
(master seed, scene id), so parallel and serial builds are byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .. import formats, geometry
from . import queries as qmod
from . import scene as smod
from . import templates

SCHEMA_VERSION = 1


@dataclass
class SynthConfig:
    train_scenes: int = 64
    test_scenes: int = 16
    seed: int = 7
    n_points_per_object: int = 512
    component_radius: float = 0.2
    hard_masks: bool = False
    # paper-scale runs swap these for 6422-scene counts; micro is the default
    pairs: tuple = tuple(p.id for p in templates.CONFUSING_PAIRS)

    def validate(self):
        if self.train_scenes < 1 or self.test_scenes < 1:
            raise ValueError("scene counts must be >= 1")
        if self.n_points_per_object < 64:
            raise ValueError("n_points_per_object must be >= 64")
        if self.component_radius <= 0:
            raise ValueError("component_radius must be > 0")
        known = {p.id for p in templates.CONFUSING_PAIRS}
        bad = [p for p in self.pairs if p not in known]
        if bad:
            raise ValueError(f"unknown pair ids {bad}; known: {sorted(known)}")
        if not self.pairs:
            raise ValueError("at least one confusing pair required")
        return self


def _pair_by_id(pair_id: str) -> templates.ConfusingPairSpec:
    for p in templates.CONFUSING_PAIRS:
        if p.id == pair_id:
            return p
    raise KeyError(pair_id)


def _build_scene(cfg: SynthConfig, scene_index: int, split: str) -> smod.Scene:
    scene_id = f"scene_{scene_index:06d}"
    rng = np.random.default_rng(templates.derive_seed(cfg.seed, scene_id, "spec"))
    pair = _pair_by_id(cfg.pairs[int(rng.integers(len(cfg.pairs)))])
    n_distractors = int(rng.integers(3))
    layout = "slots" if split == "train" else "circle"
    return smod.compose_scene(
        pair, n_distractors, layout, cfg.seed, scene_id=scene_id,
        n_points_per_object=cfg.n_points_per_object,
        component_radius=cfg.component_radius, hard_masks=cfg.hard_masks)


def _scene_pair(scene: smod.Scene) -> templates.ConfusingPairSpec:
    group = templates.TEMPLATES[scene.objects[0].category].pair_group
    for p in templates.CONFUSING_PAIRS:
        if p.id == group:
            return p
    raise KeyError(group)


def worker_count() -> int:
    env = os.environ.get("COMPASS_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return 1


def build_dataset(cfg: SynthConfig, out_dir) -> dict:
    """Generate the full dataset and return the manifest dict."""
    cfg.validate()
    bank = qmod.default_bank()
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    (out / "queries").mkdir(exist_ok=True)

    specs = [(i, "train") for i in range(cfg.train_scenes)]
    specs += [(cfg.train_scenes + i, "test") for i in range(cfg.test_scenes)]

    workers = worker_count()
    if workers > 1:
        import multiprocessing as mp

        with mp.Pool(workers) as pool:
            scenes = pool.starmap(_build_scene,
                                  [(cfg, i, split) for i, split in specs])
    else:
        scenes = [_build_scene(cfg, i, split) for i, split in specs]

    split_files = {"train": [], "test_seen": [], "test_unseen": []}
    scene_entries = []
    query_counter = 0
    n_masks = 0
    for (scene_index, split), scene in zip(specs, scenes):
        labels_check = geometry.radius_connected_components(
            scene.points, cfg.component_radius)
        if not np.array_equal(labels_check, scene.labels):
            raise RuntimeError(f"{scene.scene_id}: component labels diverge")
        formats.write_scene(out / "scenes" / f"{scene.scene_id}.cmps",
                            scene.points.astype("<f4"), scene.labels, scene.k)
        entry = scene.manifest()
        entry["split"] = split
        entry["file"] = f"scenes/{scene.scene_id}.cmps"
        scene_entries.append(entry)

        pair = _scene_pair(scene)
        variants = [("train", False)] if split == "train" else [
            ("test_seen", False), ("test_unseen", True)]
        for split_name, unseen in variants:
            qrng = np.random.default_rng(templates.derive_seed(
                cfg.seed, scene.scene_id, "queries", split_name))
            for q in qmod.scene_queries(pair, (0, 1), bank, qrng, unseen):
                qid = f"q_{query_counter:06d}"
                query_counter += 1
                record = {
                    "query_id": qid,
                    "scene_id": scene.scene_id,
                    "text": q["text"],
                    "polarity": q["polarity"],
                    "target": q["target"],
                    "split": q["split"],
                    "mask": None,
                }
                if q["polarity"] == "positive":
                    gt = smod.ground_truth_mask(scene, q["target"])
                    record["mask"] = f"masks/{qid}.cmpm"
                    formats.write_mask(out / "masks" / f"{qid}.cmpm", gt)
                    n_masks += 1
                split_files[split_name].append(record)

    for split_name, records in split_files.items():
        with open(out / "queries" / f"{split_name}.jsonl", "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "config": asdict(cfg) | {"pairs": list(cfg.pairs)},
        "counts": {
            "scenes": len(scenes),
            "train_scenes": cfg.train_scenes,
            "test_scenes": cfg.test_scenes,
            "queries": query_counter,
            "masks": n_masks,
            **{f"queries_{k}": len(v) for k, v in split_files.items()},
        },
        "splits": {
            k: {"queries": f"queries/{k}.jsonl", "n_queries": len(v)}
            for k, v in split_files.items()
        },
        "scenes": scene_entries,
        "vocabulary": bank.vocabulary(),
    }
    formats.dump_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# readers used by training/evaluation


@dataclass
class DatasetView:
    root: Path
    manifest: dict
    _scene_cache: dict = field(default_factory=dict)

    @classmethod
    def open(cls, root) -> "DatasetView":
        root = Path(root)
        manifest = formats.load_json(root / "manifest.json")
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise formats.FormatError("unsupported dataset schema version")
        return cls(root, manifest)

    def queries(self, split: str) -> list:
        if split == "negatives":
            # virtual split: every negative test query (abstention suite)
            return [q for s in ("test_seen", "test_unseen")
                    for q in self.queries(s) if q["polarity"] == "negative"]
        info = self.manifest["splits"].get(split)
        if info is None:
            raise KeyError(f"no such split {split!r}; "
                           f"have {sorted(self.manifest['splits'])}")
        records = []
        with open(self.root / info["queries"], encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(json.loads(line))
        return records

    def scene(self, scene_id: str):
        if scene_id not in self._scene_cache:
            points, labels, k = formats.read_scene(
                self.root / "scenes" / f"{scene_id}.cmps")
            self._scene_cache[scene_id] = (points.astype(np.float64), labels, k)
        return self._scene_cache[scene_id]

    def mask(self, record: dict) -> np.ndarray:
        points, _, _ = self.scene(record["scene_id"])
        if record["mask"] is None:
            return np.zeros(points.shape[0])
        return formats.read_mask(self.root / record["mask"])

    def vocabulary(self) -> list:
        return list(self.manifest["vocabulary"])
