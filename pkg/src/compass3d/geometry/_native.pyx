# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels. Same tie rules and accumulation order as the
pure-python backend in reference.py; outputs must match it bit for bit."""

import numpy as np

from libc.math cimport sqrt


cdef inline double _sq3(const double[:, ::1] a, Py_ssize_t i,
                        const double[:, ::1] b, Py_ssize_t j) nogil:
    cdef double d0 = a[i, 0] - b[j, 0]
    cdef double d1 = a[i, 1] - b[j, 1]
    cdef double d2 = a[i, 2] - b[j, 2]
    return (d0 * d0 + d1 * d1) + d2 * d2


def fps_start_index(const double[:, ::1] points, const double[::1] centroid):
    # Centroid is computed by the caller (numpy mean) so both backends see
    # the exact same value.
    cdef Py_ssize_t n = points.shape[0]
    cdef double c0 = centroid[0], c1 = centroid[1], c2 = centroid[2]
    cdef Py_ssize_t i, best
    cdef double d, bestd, d0, d1, d2
    best = 0
    bestd = -1.0
    for i in range(n):
        d0 = points[i, 0] - c0
        d1 = points[i, 1] - c1
        d2 = points[i, 2] - c2
        d = (d0 * d0 + d1 * d1) + d2 * d2
        if bestd < 0.0 or d < bestd:
            bestd = d
            best = i
    return int(best)


def farthest_point_sampling(const double[:, ::1] points, Py_ssize_t n, Py_ssize_t start):
    cdef Py_ssize_t npts = points.shape[0]
    selected_arr = np.empty(n, dtype=np.int64)
    min_d2_arr = np.empty(npts, dtype=np.float64)
    cdef long long[::1] selected = selected_arr
    cdef double[::1] md = min_d2_arr
    cdef Py_ssize_t i, j, best
    cdef double d, bestd
    selected[0] = start
    for j in range(npts):
        md[j] = _sq3(points, j, points, start)
    for i in range(1, n):
        best = 0
        bestd = md[0]
        for j in range(1, npts):
            if md[j] > bestd:
                bestd = md[j]
                best = j
        selected[i] = best
        for j in range(npts):
            d = _sq3(points, j, points, best)
            if d < md[j]:
                md[j] = d
    return selected_arr


def knn(const double[:, ::1] reference, const double[:, ::1] queries, Py_ssize_t k):
    cdef Py_ssize_t nref = reference.shape[0]
    cdef Py_ssize_t nq = queries.shape[0]
    idx_arr = np.empty((nq, k), dtype=np.int64)
    dist_arr = np.empty((nq, k), dtype=np.float64)
    cdef long long[:, ::1] idx = idx_arr
    cdef double[:, ::1] dist = dist_arr
    cdef Py_ssize_t q, j, m, pos, cnt
    cdef double d
    # Sorted k-buffer per query keyed by (distance, index); reference index
    # j increases monotonically so equal distances keep the lower index.
    for q in range(nq):
        cnt = 0
        for j in range(nref):
            d = _sq3(reference, j, queries, q)
            if cnt == k and d >= dist[q, k - 1]:
                continue
            pos = cnt if cnt < k else k - 1
            while pos > 0 and dist[q, pos - 1] > d:
                dist[q, pos] = dist[q, pos - 1]
                idx[q, pos] = idx[q, pos - 1]
                pos -= 1
            dist[q, pos] = d
            idx[q, pos] = j
            if cnt < k:
                cnt += 1
        for m in range(k):
            dist[q, m] = sqrt(dist[q, m])
    return idx_arr, dist_arr


def radius_connected_components(const double[:, ::1] points, double r):
    cdef Py_ssize_t n = points.shape[0]
    cdef double r2 = r * r
    labels_arr = np.full(n, -1, dtype=np.int64)
    stack_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] lab = labels_arr
    cdef long long[::1] st = stack_arr
    cdef Py_ssize_t seed, top, cur, j
    cdef long long next_label = 0
    for seed in range(n):
        if lab[seed] >= 0:
            continue
        lab[seed] = next_label
        top = 0
        st[top] = seed
        top += 1
        while top > 0:
            top -= 1
            cur = st[top]
            for j in range(n):
                if lab[j] < 0 and _sq3(points, cur, points, j) <= r2:
                    lab[j] = next_label
                    st[top] = j
                    top += 1
        next_label += 1
    return labels_arr
