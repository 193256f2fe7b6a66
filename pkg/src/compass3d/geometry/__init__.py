"""Deterministic point-cloud primitives.

Hot kernels (FPS, kNN, radius connected components) run on a compiled
extension when it is available and on a pure-numpy fallback otherwise;
both backends are contractually bit-identical. The remaining operations
(normalization, IDW weights, pinhole back-projection, grasp fusion) are
plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import reference

try:
    from . import _native
except ImportError:  # extension not built; fall back to numpy kernels
    _native = None

DEFAULT_BACKEND = "native" if _native is not None else "python"


def available_backends():
    names = ["python"]
    if _native is not None:
        names.insert(0, "native")
    return names


def _kernels(backend: str | None):
    name = backend or DEFAULT_BACKEND
    if name == "native":
        if _native is None:
            raise RuntimeError("native geometry backend not built")
        return _native
    if name == "python":
        return reference
    raise ValueError(f"unknown geometry backend {name!r}")


def _as_points(points) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError(f"expected (N, 3) point array with N >= 1, got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("point coordinates must be finite")
    return pts


# ---------------------------------------------------------------------------
# normalization


@dataclass
class UnitSphereResult:
    points: np.ndarray
    center: np.ndarray
    scale: float
    degenerate: bool = False

    def invert(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.center[None, :]


def normalize_unit_sphere(points) -> UnitSphereResult:
    """Center at the centroid and scale so the farthest point has norm 1.

    Coincident clouds (zero extent) keep scale 1 and set the degenerate
    flag instead of dividing by zero.
    """
    pts = _as_points(points)
    center = pts.mean(axis=0)
    centered = pts - center[None, :]
    scale = float(np.sqrt((centered * centered).sum(axis=1).max()))
    if scale <= 0.0:
        return UnitSphereResult(centered, center, 1.0, degenerate=True)
    return UnitSphereResult(centered / scale, center, scale)


# ---------------------------------------------------------------------------
# kernels


def farthest_point_sampling(points, n: int, seed=None, backend: str | None = None) -> np.ndarray:
    """Iterative max-min subset selection; ties break to the lowest index.

    The start point is the one nearest the centroid unless `seed` is given,
    in which case it is drawn uniformly from the cloud.
    """
    pts = _as_points(points)
    if not 1 <= n <= pts.shape[0]:
        raise ValueError(f"cannot sample {n} points from a cloud of {pts.shape[0]}")
    kern = _kernels(backend)
    if seed is None:
        # column-sorted mean: the start point is invariant to input order
        centroid = np.sort(pts, axis=0).mean(axis=0)
        start = kern.fps_start_index(pts, centroid)
    else:
        start = int(np.random.Generator(np.random.PCG64(seed)).integers(pts.shape[0]))
    return np.asarray(kern.farthest_point_sampling(pts, n, start))


def knn(reference_points, queries, k: int, backend: str | None = None):
    """k nearest reference points per query, distances ascending.

    Returns (indices (Q, k), distances (Q, k)); ties break to the lowest
    reference index.
    """
    ref = _as_points(reference_points)
    qs = _as_points(queries)
    if not 1 <= k <= ref.shape[0]:
        raise ValueError(f"k={k} out of range for {ref.shape[0]} reference points")
    idx, dist = _kernels(backend).knn(ref, qs, k)
    return np.asarray(idx), np.asarray(dist)


def radius_connected_components(points, r: float, backend: str | None = None) -> np.ndarray:
    """Label points by radius-graph connected components.

    Two points share a label iff they are linked by a chain of hops each
    <= r. Labels are numbered by first point occurrence (point 0 gets 0).
    """
    pts = _as_points(points)
    if not r > 0:
        raise ValueError("radius must be > 0")
    return np.asarray(_kernels(backend).radius_connected_components(pts, float(r)))


def merge_small_components(points, labels, k_target: int) -> np.ndarray:
    """Reduce the partition to `k_target` labels.

    Keeps the `k_target` largest components (ties toward the lower label)
    and merges every other component into the component holding its
    nearest point. Labels are renumbered by first occurrence.
    """
    pts = _as_points(points)
    labels = np.asarray(labels, dtype=np.int64).copy()
    uniq, counts = np.unique(labels, return_counts=True)
    if k_target < 1 or k_target > uniq.size:
        raise ValueError(f"k_target={k_target} out of range for {uniq.size} components")
    order = np.lexsort((uniq, -counts))
    keep = set(uniq[order[:k_target]].tolist())
    kept_mask = np.isin(labels, list(keep))
    kept_idx = np.flatnonzero(kept_mask)
    for lab in uniq:
        if lab in keep:
            continue
        members = np.flatnonzero(labels == lab)
        diff = pts[members][:, None, :] - pts[kept_idx][None, :, :]
        d2 = (diff * diff).sum(axis=2)
        nearest = kept_idx[np.unravel_index(np.argmin(d2), d2.shape)[1]]
        labels[members] = labels[nearest]
    return renumber_labels(labels)


def renumber_labels(labels) -> np.ndarray:
    """Renumber labels by order of first occurrence."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.empty_like(labels)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(labels.tolist()):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


# ---------------------------------------------------------------------------
# interpolation weights


def idw_weights(distances, eps: float = 1e-8) -> np.ndarray:
    """Inverse-square-distance weights, normalized to sum 1.

    w_j = (d_j^2 + eps)^-1 / sum_i (d_i^2 + eps)^-1; eps regularizes
    coincident points.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("distance list must be non-empty")
    if (d < 0).any():
        raise ValueError("distances must be non-negative")
    inv = 1.0 / (d * d + eps)
    return inv / inv.sum(axis=-1, keepdims=True) if d.ndim > 1 else inv / inv.sum()


# ---------------------------------------------------------------------------
# pinhole camera


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


def backproject_depth(depth, mask, intr: CameraIntrinsics) -> np.ndarray:
    """Lift masked depth pixels to camera-space 3D points.

    Pixel (u, v) with depth z maps to ((u-cx) z / fx, (v-cy) z / fy, z).
    Zero-depth pixels are skipped even when masked; points come out in
    row-major pixel order.
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape or depth.ndim != 2:
        raise ValueError("depth and mask must be matching H x W arrays")
    if (depth < 0).any():
        raise ValueError("depth must be non-negative")
    vs, us = np.nonzero(mask & (depth > 0))
    if vs.size == 0:
        raise ValueError("mask selects no pixels with positive depth")
    z = depth[vs, us]
    x = (us - intr.cx) * z / intr.fx
    y = (vs - intr.cy) * z / intr.fy
    return np.stack([x, y, z], axis=1)


def project_points(points, intr: CameraIntrinsics) -> np.ndarray:
    """Forward pinhole projection to pixel coordinates (u, v)."""
    pts = _as_points(points)
    if (pts[:, 2] <= 0).any():
        raise ValueError("projection requires positive depth")
    u = pts[:, 0] * intr.fx / pts[:, 2] + intr.cx
    v = pts[:, 1] * intr.fy / pts[:, 2] + intr.cy
    return np.stack([u, v], axis=1)


# ---------------------------------------------------------------------------
# grasp fusion


def fuse_grasp_scores(grasp_confidences, affordance_at_grasp) -> int:
    """Index of the grasp maximizing confidence * affordance (ties: lowest)."""
    conf = np.asarray(grasp_confidences, dtype=np.float64)
    aff = np.asarray(affordance_at_grasp, dtype=np.float64)
    if conf.size == 0 or aff.size == 0:
        raise ValueError("score lists must be non-empty")
    if conf.shape != aff.shape:
        raise ValueError("score lists must have equal length")
    for name, arr in (("confidences", conf), ("affordances", aff)):
        if (arr < 0).any() or (arr > 1).any():
            raise ValueError(f"{name} must lie in [0, 1]")
    return int(np.argmax(conf * aff))
