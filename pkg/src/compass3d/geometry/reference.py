"""Pure-numpy geometry kernels (fallback backend).

All squared distances are accumulated coordinate-by-coordinate in the same
order as the native kernels ((dx*dx + dy*dy) + dz*dz) so both backends
produce bit-identical results. Ties always break toward the lowest index.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 256  # query rows per pairwise-distance block


def _pairwise_sq(queries: np.ndarray, reference: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - reference[None, :, :]
    sq = diff * diff
    return (sq[..., 0] + sq[..., 1]) + sq[..., 2]


def _sq_to_point(points: np.ndarray, p: np.ndarray) -> np.ndarray:
    diff = points - p[None, :]
    sq = diff * diff
    return (sq[:, 0] + sq[:, 1]) + sq[:, 2]


def fps_start_index(points: np.ndarray, centroid: np.ndarray) -> int:
    d2 = _sq_to_point(points, centroid)
    return int(np.argmin(d2))


def farthest_point_sampling(points: np.ndarray, n: int, start: int) -> np.ndarray:
    npts = points.shape[0]
    selected = np.empty(n, dtype=np.int64)
    selected[0] = start
    min_d2 = _sq_to_point(points, points[start])
    for i in range(1, n):
        idx = int(np.argmax(min_d2))
        selected[i] = idx
        cand = _sq_to_point(points, points[idx])
        np.minimum(min_d2, cand, out=min_d2)
    return selected


def knn(reference: np.ndarray, queries: np.ndarray, k: int):
    nq = queries.shape[0]
    idx_out = np.empty((nq, k), dtype=np.int64)
    d2_out = np.empty((nq, k), dtype=np.float64)
    for lo in range(0, nq, _CHUNK):
        hi = min(lo + _CHUNK, nq)
        d2 = _pairwise_sq(queries[lo:hi], reference)
        if k < d2.shape[1]:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
            for r in range(d2.shape[0]):
                row = d2[r]
                thr = row[part[r]].max()
                cand = np.flatnonzero(row <= thr)
                order = np.lexsort((cand, row[cand]))[:k]
                chosen = cand[order]
                idx_out[lo + r] = chosen
                d2_out[lo + r] = row[chosen]
        else:
            for r in range(d2.shape[0]):
                row = d2[r]
                order = np.lexsort((np.arange(row.size), row))
                idx_out[lo + r] = order
                d2_out[lo + r] = row[order]
    return idx_out, np.sqrt(d2_out)


def radius_connected_components(points: np.ndarray, r: float) -> np.ndarray:
    npts = points.shape[0]
    r2 = r * r
    labels = np.full(npts, -1, dtype=np.int64)
    next_label = 0
    for seed in range(npts):
        if labels[seed] >= 0:
            continue
        labels[seed] = next_label
        frontier = np.array([seed], dtype=np.int64)
        while frontier.size:
            d2 = _pairwise_sq(points[frontier], points)
            reach = (d2 <= r2).any(axis=0)
            new = np.flatnonzero(reach & (labels < 0))
            labels[new] = next_label
            frontier = new
        next_label += 1
    return labels
