"""Per-scene geometric precomputation shared by every forward pass.

All of this is query-independent and parameter-independent: point-encoder
input statistics, per-object FPS centers, instance-bounded group
memberships, and the propagation neighbor structure. Training caches one
record per scene and reuses it across epochs and queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry
from .config import ModelConfig


@dataclass
class SceneGeometry:
    points: np.ndarray        # (N, 3) float64
    labels: np.ndarray        # (N,) int64
    enc_x: np.ndarray         # (N, F_in) point-encoder inputs
    object_slices: list       # [(start, stop)] per object (contiguous labels)
    object_index_of: np.ndarray  # (N,) object id per point
    center_idx: np.ndarray    # (G,) scene point index of each group center
    group_idx: np.ndarray     # (G, M) scene point indices of group members
    group_object: np.ndarray  # (G,) owning object per group
    prop_idx: np.ndarray      # (N, k_p) group index of propagation neighbors
    prop_w: np.ndarray        # (N, k_p) IDW weights (spatial mode)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_objects(self) -> int:
        return len(self.object_slices)

    @property
    def n_groups(self) -> int:
        return self.center_idx.shape[0]


# object-relative xyz + relative norm + mean neighbor offset
# + rms neighbor distance + local covariance eigenvalues; absolute scene
# coordinates are deliberately excluded (slot/circle layout shortcut)
ENCODER_INPUT_DIM = 11
EIG_SCALE = 100.0  # brings desk-scale covariance spectra to O(1)


def encoder_inputs(points: np.ndarray, k: int,
                   labels: np.ndarray | None = None) -> np.ndarray:
    """Per-point coordinates plus object-frame and neighborhood statistics.

    Objects are placed by translation only, so coordinates relative to the
    object centroid recover the canonical pose; local covariance spectra
    capture surface shape (planar blade vs linear handle vs shell).
    Neighbor lists are distance-sorted, so the statistics are invariant to
    input point order (bitwise, absent exact distance ties).
    """
    n = points.shape[0]
    k = min(k, n)
    idx, dist = geometry.knn(points, points, k)
    nbrs = points[idx]                        # (N, k, 3)
    offsets = nbrs - points[:, None, :]
    mean_off = offsets.mean(axis=1)
    rms = np.sqrt((dist * dist).mean(axis=1, keepdims=True))
    centered = offsets - mean_off[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigs = np.linalg.eigvalsh(cov)            # ascending, (N, 3)
    if labels is None:
        rel = points - _order_invariant_mean(points)[None, :]
    else:
        rel = np.empty_like(points)
        for lab in np.unique(labels):
            m = labels == lab
            rel[m] = points[m] - _order_invariant_mean(points[m])[None, :]
    rel_norm = np.linalg.norm(rel, axis=1, keepdims=True)
    return np.concatenate([rel, rel_norm, mean_off, rms,
                           eigs * EIG_SCALE], axis=1)


def _order_invariant_mean(points: np.ndarray) -> np.ndarray:
    """Column means summed in sorted order: bit-identical under any
    permutation of the rows."""
    return np.sort(points, axis=0).mean(axis=0)


def build_scene_geometry(points: np.ndarray, labels: np.ndarray,
                         cfg: ModelConfig) -> SceneGeometry:
    points = np.ascontiguousarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = points.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels must match point count")
    k_objects = int(labels.max()) + 1

    object_indices = [np.flatnonzero(labels == k) for k in range(k_objects)]
    for k, idx in enumerate(object_indices):
        if idx.size == 0:
            raise ValueError(f"instance label {k} has no points")
        if idx.size < cfg.n_groups or idx.size < cfg.group_size:
            raise ValueError(
                f"object {k} has {idx.size} points; needs >= "
                f"{max(cfg.n_groups, cfg.group_size)} for grouping")

    center_rows, group_rows, group_obj = [], [], []
    for k, idx in enumerate(object_indices):
        obj_pts = points[idx]
        local_centers = geometry.farthest_point_sampling(obj_pts, cfg.n_groups)
        centers = idx[local_centers]
        members_local, _ = geometry.knn(obj_pts, points[centers], cfg.group_size)
        center_rows.append(centers)
        group_rows.append(idx[members_local])
        group_obj.append(np.full(cfg.n_groups, k, dtype=np.int64))
    center_idx = np.concatenate(center_rows)
    group_idx = np.concatenate(group_rows)
    group_object = np.concatenate(group_obj)

    # propagation neighbors: each point's k_p nearest group centers, own
    # object only unless the cross-object variant is requested
    prop_idx = np.empty((n, cfg.k_prop), dtype=np.int64)
    prop_w = np.empty((n, cfg.k_prop))
    if cfg.idw_cross_object:
        nbr, dist = geometry.knn(points[center_idx], points, cfg.k_prop)
        prop_idx[:] = nbr
        prop_w[:] = geometry.idw_weights(dist)
    else:
        for k, idx in enumerate(object_indices):
            rows = np.flatnonzero(group_object == k)
            nbr, dist = geometry.knn(points[center_idx[rows]], points[idx], cfg.k_prop)
            prop_idx[idx] = rows[nbr]
            prop_w[idx] = geometry.idw_weights(dist)

    object_slices = []
    for idx in object_indices:
        start, stop = int(idx.min()), int(idx.max()) + 1
        if stop - start != idx.size:
            # non-contiguous labeling still works; slices are only used for
            # reporting
            start, stop = -1, -1
        object_slices.append((start, stop))

    return SceneGeometry(
        points=points,
        labels=labels,
        enc_x=encoder_inputs(points, cfg.encoder_k, labels),
        object_slices=object_slices,
        object_index_of=labels.copy(),
        center_idx=center_idx,
        group_idx=group_idx,
        group_object=group_object,
        prop_idx=prop_idx,
        prop_w=prop_w,
    )


class GeometryCache:
    """Keyed store of SceneGeometry records (key: dataset scene id)."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self._store: dict = {}

    def get(self, key, points, labels) -> SceneGeometry:
        if key not in self._store:
            self._store[key] = build_scene_geometry(points, labels, self.cfg)
        return self._store[key]
