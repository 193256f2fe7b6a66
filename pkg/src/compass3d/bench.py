"""Geometry kernel benchmark: compiled extension vs pure-numpy fallback.

Also asserts both backends agree exactly on every timed instance, so the
benchmark doubles as a parity check.
"""

from __future__ import annotations

import time

import numpy as np

from . import geometry


def _clustered_cloud(rng: np.random.Generator, n: int) -> np.ndarray:
    centers = rng.uniform(-3, 3, size=(4, 3))
    pts = centers[rng.integers(4, size=n)] + rng.normal(size=(n, 3)) * 0.3
    return pts


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def run_bench(sizes, repeats: int = 3, seed: int = 0) -> list:
    backends = geometry.available_backends()
    rows = []
    for n in sizes:
        rng = np.random.default_rng(seed)
        pts = _clustered_cloud(rng, n)
        queries = pts[: max(1, n // 4)]
        k = min(16, n)
        n_sample = min(64, n)
        cases = {
            "farthest_point_sampling": lambda b: geometry.farthest_point_sampling(
                pts, n_sample, backend=b),
            "knn": lambda b: geometry.knn(pts, queries, k, backend=b),
            "radius_connected_components": lambda b:
                geometry.radius_connected_components(pts, 0.45, backend=b),
        }
        for kernel, call in cases.items():
            outputs = {}
            times = {}
            for backend in backends:
                times[backend] = _time(lambda: call(backend), repeats)
                outputs[backend] = call(backend)
            if len(backends) == 2:
                a, b = (outputs[bk] for bk in backends)
                if isinstance(a, tuple):
                    for x, y in zip(a, b):
                        assert np.array_equal(x, y), f"{kernel}: backend mismatch"
                else:
                    assert np.array_equal(a, b), f"{kernel}: backend mismatch"
            base = times[backends[-1]]  # python fallback is listed last
            for backend in backends:
                rows.append({
                    "kernel": kernel,
                    "n": n,
                    "backend": backend,
                    "ms": round(times[backend], 3),
                    "speedup": round(base / times[backend], 2)
                    if times[backend] > 0 else float("inf"),
                })
    return rows
