from __future__ import annotations

from typing import List, Tuple

import numpy as np

SAT_EPSILON = 1e-12


def triangle_areas(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Areas of the triangles `(a[i], b[i], c[i])`."""
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Closest point on each triangle `(a[i], b[i], c[i])` to the query `p[i]`, all arrays of shape `(n, 3)`.

    Uses the Voronoi-region classification from Ericson's *Real-Time Collision Detection* (section 5.1.5), evaluated for
    every region at once and selected with `np.select` in region priority order.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom

    conditions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [
        a,
        b,
        a + t_ab[:, None] * ab,
        c,
        a + t_ac[:, None] * ac,
        b + t_bc[:, None] * (c - b),
    ]
    interior = a + v[:, None] * ab + w[:, None] * ac
    conditions = [cond[:, None] for cond in conditions]
    return np.select(conditions, choices, default=interior)


def solid_angles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Signed solid angle subtended by triangles at query points (Van Oosterom and Strackee). Inputs broadcast against each
    other, the last axis holds the coordinates.
    """
    ra = a - p
    rb = b - p
    rc = c - p
    la = np.linalg.norm(ra, axis=-1)
    lb = np.linalg.norm(rb, axis=-1)
    lc = np.linalg.norm(rc, axis=-1)
    numerator = np.einsum("...i,...i->...", ra, np.cross(rb, rc))
    denominator = (
        la * lb * lc
        + np.einsum("...i,...i->...", ra, rb) * lc
        + np.einsum("...i,...i->...", rb, rc) * la
        + np.einsum("...i,...i->...", rc, ra) * lb
    )
    return 2.0 * np.arctan2(numerator, denominator)


def triangle_box_overlap(triangle: np.ndarray, centers: np.ndarray, half_width: float) -> np.ndarray:
    """
    Separating-axis test between one triangle (shape `(3, 3)`) and many closed cubes given by their centers (shape
    `(m, 3)`) and common half width. Touching counts as overlap; projections are compared with a `1e-12` slack.

    The 13 candidate axes are the three box normals, the triangle normal and the nine cross products between box normals
    and triangle edges (Akenine-Moller).
    """
    edges = np.array([triangle[1] - triangle[0], triangle[2] - triangle[1], triangle[0] - triangle[2]])
    box_axes = np.eye(3)
    cross_axes = np.cross(box_axes[:, None, :], edges[None, :, :]).reshape(9, 3)
    normal = np.cross(edges[0], edges[1])
    axes = np.vstack([box_axes, normal[None, :], cross_axes])
    # vertices relative to every box center: (m, 3, 3) -> projections (m, 3, 13)
    relative = triangle[None, :, :] - centers[:, None, :]
    projections = relative @ axes.T
    radius = half_width * np.abs(axes).sum(axis=1) + SAT_EPSILON * np.maximum(np.linalg.norm(axes, axis=1), 1.0)
    separated = (projections.min(axis=1) > radius) | (projections.max(axis=1) < -radius)
    return ~separated.any(axis=1)


def clip_polygon(polygon: np.ndarray, axis: int, value: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Splits a convex planar polygon (vertices in order, shape `(k, 3)`) by the plane `x[axis] = value`. Returns the parts
    below and above the plane; a part with fewer than three vertices is returned as an empty array. Intersection points
    get the plane coordinate exactly.
    """
    below: List[np.ndarray] = []
    above: List[np.ndarray] = []
    count = len(polygon)
    offsets = polygon[:, axis] - value
    for i in range(count):
        current, following = polygon[i], polygon[(i + 1) % count]
        s_current, s_following = offsets[i], offsets[(i + 1) % count]
        if s_current <= 0:
            below.append(current)
        if s_current >= 0:
            above.append(current)
        if (s_current < 0 < s_following) or (s_following < 0 < s_current):
            t = s_current / (s_current - s_following)
            crossing = current + t * (following - current)
            crossing[axis] = value
            below.append(crossing)
            above.append(crossing)
    empty = np.zeros((0, 3))
    below_arr = np.array(below) if len(below) >= 3 else empty
    above_arr = np.array(above) if len(above) >= 3 else empty
    return below_arr, above_arr
