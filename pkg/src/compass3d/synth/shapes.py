"""Seeded surface samplers for the procedural object primitives.

Every sampler draws from the supplied generator only, so object geometry
is byte-reproducible from a seed. Areas used for allocation are the true
surface areas except where noted (good enough for proportional sampling).
"""

from __future__ import annotations

import math

import numpy as np

_AXES = {
    "x": np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]),
    "y": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
    "z": np.eye(3),
}


def _orient(points: np.ndarray, axis: str, center) -> np.ndarray:
    return points @ _AXES[axis].T + np.asarray(center, dtype=np.float64)


def box_area(size, open_top=False) -> float:
    sx, sy, sz = size
    area = 2 * (sx * sy + sy * sz + sx * sz)
    if open_top:
        area -= sx * sy
    return area


def sample_box(rng: np.random.Generator, n: int, size, center=(0.0, 0.0, 0.0),
               open_top: bool = False) -> np.ndarray:
    sx, sy, sz = size
    faces = [
        (0, +1, sy * sz), (0, -1, sy * sz),
        (1, +1, sx * sz), (1, -1, sx * sz),
        (2, -1, sx * sy),
    ]
    if not open_top:
        faces.append((2, +1, sx * sy))
    areas = np.array([f[2] for f in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    half = np.array([sx, sy, sz]) / 2.0
    pts = np.empty((n, 3))
    for fi, (axis, sign, _) in enumerate(faces):
        m = choice == fi
        o1, o2 = [a for a in range(3) if a != axis]
        pts[m, axis] = sign * half[axis]
        pts[m, o1] = u[m] * (2 * half[o1])
        pts[m, o2] = v[m] * (2 * half[o2])
    return pts + np.asarray(center, dtype=np.float64)


def cylinder_area(radius, height, cap_bottom=True, cap_top=True) -> float:
    area = 2 * math.pi * radius * height
    caps = int(cap_bottom) + int(cap_top)
    return area + caps * math.pi * radius * radius


def sample_cylinder(rng: np.random.Generator, n: int, radius: float, height: float,
                    center=(0.0, 0.0, 0.0), axis: str = "z",
                    cap_bottom: bool = True, cap_top: bool = True) -> np.ndarray:
    lateral = 2 * math.pi * radius * height
    cap = math.pi * radius * radius
    areas = [lateral]
    kinds = ["side"]
    if cap_bottom:
        areas.append(cap)
        kinds.append("bottom")
    if cap_top:
        areas.append(cap)
        kinds.append("top")
    areas = np.array(areas)
    choice = rng.choice(len(kinds), size=n, p=areas / areas.sum())
    theta = rng.uniform(0, 2 * math.pi, size=n)
    h = rng.uniform(-0.5, 0.5, size=n) * height
    rr = radius * np.sqrt(rng.uniform(size=n))
    pts = np.empty((n, 3))
    for ki, kind in enumerate(kinds):
        m = choice == ki
        if kind == "side":
            pts[m, 0] = radius * np.cos(theta[m])
            pts[m, 1] = radius * np.sin(theta[m])
            pts[m, 2] = h[m]
        else:
            pts[m, 0] = rr[m] * np.cos(theta[m])
            pts[m, 1] = rr[m] * np.sin(theta[m])
            pts[m, 2] = (height / 2.0) if kind == "top" else (-height / 2.0)
    return _orient(pts, axis, center)


def sphere_area(radius) -> float:
    return 4 * math.pi * radius * radius


def sample_sphere(rng: np.random.Generator, n: int, radius: float,
                  center=(0.0, 0.0, 0.0)) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + np.asarray(center, dtype=np.float64)


def ellipsoid_area(axes) -> float:
    # Knud Thomsen approximation, plenty for allocation
    a, b, c = axes
    p = 1.6075
    return 4 * math.pi * ((a**p * b**p + a**p * c**p + b**p * c**p) / 3) ** (1 / p)


def sample_ellipsoid(rng: np.random.Generator, n: int, axes,
                     center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Approximately uniform ellipsoid shell (sphere directions scaled)."""
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * np.asarray(axes, dtype=np.float64) + np.asarray(center, dtype=np.float64)


def hemisphere_area(radius) -> float:
    return 2 * math.pi * radius * radius


def sample_hemisphere(rng: np.random.Generator, n: int, radius: float,
                      center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Lower-hemisphere shell (cavity opens toward +z), like a bowl."""
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = -np.abs(v[:, 2])
    return v * radius + np.asarray(center, dtype=np.float64)


def cone_area(radius, height) -> float:
    slant = math.hypot(radius, height)
    return math.pi * radius * slant + math.pi * radius * radius


def sample_cone(rng: np.random.Generator, n: int, radius: float, height: float,
                center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Cone with apex up at +height/2, circular base (with cap) at -height/2."""
    slant = math.pi * radius * math.hypot(radius, height)
    base = math.pi * radius * radius
    choice = rng.choice(2, size=n, p=np.array([slant, base]) / (slant + base))
    theta = rng.uniform(0, 2 * math.pi, size=n)
    pts = np.empty((n, 3))
    m = choice == 0
    # uniform over lateral surface: radius fraction sqrt-distributed
    frac = np.sqrt(rng.uniform(size=n))
    pts[m, 0] = radius * frac[m] * np.cos(theta[m])
    pts[m, 1] = radius * frac[m] * np.sin(theta[m])
    pts[m, 2] = height / 2.0 - frac[m] * height
    m = ~m
    rr = radius * np.sqrt(rng.uniform(size=n))
    pts[m, 0] = rr[m] * np.cos(theta[m])
    pts[m, 1] = rr[m] * np.sin(theta[m])
    pts[m, 2] = -height / 2.0
    return pts + np.asarray(center, dtype=np.float64)


def torus_area(ring_radius, tube_radius, arc=2 * math.pi) -> float:
    return 2 * math.pi * tube_radius * ring_radius * arc


def sample_torus(rng: np.random.Generator, n: int, ring_radius: float,
                 tube_radius: float, center=(0.0, 0.0, 0.0), plane: str = "xy",
                 arc_start: float = 0.0, arc_end: float = 2 * math.pi) -> np.ndarray:
    """Torus shell section; `plane` is the plane of the ring circle.

    Uniform on the surface via rejection on the (R + r cos psi) density.
    """
    out = np.empty((0, 2))
    need = n
    while need > 0:
        batch = max(2 * need, 64)
        phi = rng.uniform(arc_start, arc_end, size=batch)
        psi = rng.uniform(0, 2 * math.pi, size=batch)
        accept = rng.uniform(size=batch) <= (
            (ring_radius + tube_radius * np.cos(psi)) / (ring_radius + tube_radius))
        got = np.stack([phi[accept], psi[accept]], axis=1)[:need]
        out = np.concatenate([out, got])
        need = n - out.shape[0]
    phi, psi = out[:, 0], out[:, 1]
    ring = ring_radius + tube_radius * np.cos(psi)
    flat = np.stack([ring * np.cos(phi), ring * np.sin(phi),
                     tube_radius * np.sin(psi)], axis=1)
    if plane == "xy":
        pts = flat
    elif plane == "xz":
        pts = flat[:, [0, 2, 1]]
    elif plane == "yz":
        pts = flat[:, [2, 0, 1]]
    else:
        raise ValueError(f"unknown torus plane {plane!r}")
    return pts + np.asarray(center, dtype=np.float64)
