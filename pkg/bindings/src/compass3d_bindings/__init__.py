"""Scripting bindings for notebook and pipeline consumers.

Thin wrappers around the core package: dataset synthesis, immutable
inference sessions, and metric scoring. No logic is reimplemented here;
every call produces results identical to the CLI. Arrays cross the
boundary as contiguous float64 buffers; C-contiguous inputs are used
zero-copy, anything else is copied.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import numpy as np

import compass3d
from compass3d import geometry, metrics
from compass3d.model import GeometryCache
from compass3d.synth.dataset import SynthConfig, build_dataset as _build_dataset
from compass3d.train import load_model_for_inference

__version__ = compass3d.__version__

_SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthConfig)}


def build_dataset(config: dict, out_dir) -> dict:
    """Generate a dataset from a plain config dict; returns the manifest.

    Unknown keys are rejected by name. Byte-identical to the CLI `synth`
    command for the same configuration and seed.
    """
    unknown = sorted(set(config) - _SYNTH_KEYS)
    if unknown:
        raise ValueError(f"unknown dataset config keys: {unknown}; "
                         f"known: {sorted(_SYNTH_KEYS)}")
    cfg = SynthConfig(**config)
    if "pairs" in config:
        cfg.pairs = tuple(config["pairs"])
    return _build_dataset(cfg, out_dir)


class Session:
    """A loaded checkpoint plus its configuration; immutable after load.

    Safe to share across threads: every call builds its own graph over
    read-only parameters.
    """

    def __init__(self, checkpoint, component_radius: float = 0.2):
        self._model, self._meta = load_model_for_inference(Path(checkpoint))
        self._radius = float(component_radius)
        self._cache = GeometryCache(self._model.cfg)

    @property
    def model_config(self) -> dict:
        return self._model.cfg.to_dict()

    @property
    def metadata(self) -> dict:
        return dict(self._meta)

    def predict(self, points, query: str, labels=None) -> np.ndarray:
        """Per-point affordance heatmap for a point cloud and intent query.

        `labels` defaults to radius-graph connected components over the
        cloud (the same assignment the CLI uses for depth input).
        """
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if labels is None:
            labels = geometry.radius_connected_components(pts, self._radius)
        else:
            labels = np.asarray(labels, dtype=np.int64)
        key = hashlib.sha256(pts.tobytes() + labels.tobytes()).hexdigest()
        geom = self._cache.get(key, pts, labels)
        out = self._model.forward(geom, query, mode="infer")
        return out.heatmap_values.copy()


def load_session(checkpoint, component_radius: float = 0.2) -> Session:
    return Session(checkpoint, component_radius=component_radius)


def predict(session: Session, points, query: str) -> np.ndarray:
    return session.predict(points, query)


def score(pred, gt) -> dict:
    """aIoU/AUC (x100, report convention), SIM and MAE for one sample.

    Undefined metrics (single-class or empty ground truth) come back None.
    """
    pred = np.ascontiguousarray(np.asarray(pred, dtype=np.float64)).reshape(-1)
    gt = np.ascontiguousarray(np.asarray(gt, dtype=np.float64)).reshape(-1)
    auc_val = metrics.auc(pred, gt)
    sim_val = metrics.sim(pred, gt)
    return {
        "aiou": metrics.aiou(pred, gt) * 100.0,
        "auc": None if auc_val is None else auc_val * 100.0,
        "sim": sim_val,
        "mae": metrics.mae(pred, gt),
    }


__all__ = ["Session", "build_dataset", "load_session", "predict", "score",
           "__version__"]
