"""
Extreme values of the field over the mesh surface.

Inside a depth-0 cell the field is trilinear, so over a sub-triangle lying in one cell and parametrized as
`v = alpha * P1 + beta * P2 + (1 - alpha - beta) * P3` it becomes a bivariate cubic `H(alpha, beta)`. Its extremes over
the closed sub-triangle are attained at interior critical points, at critical points of the three edge restrictions
(cubics in one variable) or at the vertices. Evaluating the field at all these candidates over all sub-triangles of
all faces gives the exact minimum and maximum over the surface.

Interior critical points solve the quadratic gradient system. Eliminating `alpha` leaves a quartic in `beta`, solved in
closed form. When that elimination degenerates, the roles of `alpha` and `beta` are swapped, and if that degenerates
too the system is solved by Newton iterations started from a grid over the triangle.
"""

from __future__ import annotations

import csv
import pathlib
import warnings
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.signal import convolve2d

from thinshell.exceptions import MissingShellError, SpaceMismatchError
from thinshell.field import ImplicitField
from thinshell.mesh import TriangleMesh, sample_surface
from thinshell.models import (
    CandidateCounts,
    CandidateKind,
    CandidatePoint,
    DistanceMode,
    ShellInterval,
    ValidationReport,
)
from thinshell.svo import SparseVoxelOctree, decode_lattice, encode_lattice
from thinshell.utils.concurrency import map_chunks
from thinshell.utils.geometry import clip_polygon, triangle_areas
from thinshell.utils.polynomials import ferrari_roots, solve_quadratic

SIMPLEX_TOLERANCE = 1e-10
MERGE_DISTANCE = 1e-9
SLIVER_AREA = 1e-16
DEGENERACY = 1e-12
NEAR_POLE = 1e-6
NEWTON_GRID = 64
NEWTON_ITERATIONS = 32
POLISH_STEPS = 3
GRADIENT_TOLERANCE = 1e-10
GRID_MERGE = 1e-7
UNIT_TOLERANCE = 1e-9
FACE_CHUNK = 256

KIND_CODES = {CandidateKind.INTERIOR: 0, CandidateKind.EDGE: 1, CandidateKind.VERTEX: 2}
KINDS = {code: kind for kind, code in KIND_CODES.items()}
VERTEX_COORDINATES = ((1.0, 0.0), (0.0, 1.0), (0.0, 0.0))

CANDIDATE_DTYPE = np.dtype(
    [
        ("face_id", "i8"),
        ("sub_tri_id", "i8"),
        ("kind", "u1"),
        ("alpha", "f8"),
        ("beta", "f8"),
        ("x", "f8"),
        ("y", "f8"),
        ("z", "f8"),
        ("value", "f8"),
    ]
)


class SubTriangle(NamedTuple):
    cell: int
    corners: np.ndarray


def split_triangle(triangle: np.ndarray, svo: SparseVoxelOctree) -> List[SubTriangle]:
    """
    Cuts a unit-space triangle with the depth-0 grid planes crossing it, then fans each convex piece into triangles.

    :param triangle: corners of shape `(3, 3)`.
    :param svo: the octree giving the depth-0 cell width.
    :return: sub-triangles, each with the Morton code of the depth-0 cell holding it.
    """
    triangle = np.asarray(triangle, dtype=np.float64)
    width = svo.cell_width(0)
    pieces = [triangle]
    for axis in range(3):
        low, high = triangle[:, axis].min(), triangle[:, axis].max()
        planes = np.arange(np.floor(low / width) + 1, np.ceil(high / width)) * width
        if planes.size == 0:
            continue
        cut = []
        for polygon in pieces:
            rest = polygon
            for value in planes:
                if len(rest) == 0:
                    break
                below, rest = clip_polygon(rest, axis, value)
                if len(below):
                    cut.append(below)
            if len(rest):
                cut.append(rest)
        pieces = cut

    result = []
    for polygon in pieces:
        lattice = svo.containing_lattice(polygon.mean(axis=0)[None, :], 0)
        cell = int(encode_lattice(lattice)[0])
        for i in range(1, len(polygon) - 1):
            result.append(SubTriangle(cell, np.array([polygon[0], polygon[i], polygon[i + 1]])))
    return result


def trilinear_polynomial(t: Sequence[float], triangle: np.ndarray) -> np.ndarray:
    """
    Coefficients `H[i, j]` of `alpha^i beta^j` (shape `(4, 4)`) of the trilinear form `t0..t7` restricted to the
    triangle `v = alpha * P1 + beta * P2 + (1 - alpha - beta) * P3`, with corners in cell-local coordinates.
    """
    p1, p2, p3 = np.asarray(triangle, dtype=np.float64)
    d1, d2 = p1 - p3, p2 - p3
    x, y, z = (np.array([[p3[a], d2[a]], [d1[a], 0.0]]) for a in range(3))
    xy = convolve2d(x, y)
    yz = convolve2d(y, z)
    xz = convolve2d(x, z)
    xyz = convolve2d(xy, z)
    h = np.zeros((4, 4))
    h[0, 0] += t[0]
    h[:2, :2] += t[1] * x + t[2] * y + t[3] * z
    h[:3, :3] += t[4] * xy + t[5] * yz + t[6] * xz
    h += t[7] * xyz
    return h


def _gradient_coefficients(c: np.ndarray) -> np.ndarray:
    """`(a1..a6)` of `a1 alpha^2 + a2 beta^2 + a3 alpha beta + a4 alpha + a5 beta + a6`."""
    padded = np.zeros((3, 3))
    rows, cols = min(3, c.shape[0]), min(3, c.shape[1])
    padded[:rows, :cols] = c[:rows, :cols]
    return np.array([padded[2, 0], padded[0, 2], padded[1, 1], padded[1, 0], padded[0, 1], padded[0, 0]])


def _swap(coefficients: np.ndarray) -> np.ndarray:
    a1, a2, a3, a4, a5, a6 = coefficients
    return np.array([a2, a1, a3, a5, a4, a6])


def _eliminate(a: np.ndarray, b: np.ndarray) -> Optional[List[Tuple[float, float]]]:
    """
    Critical points from eliminating `alpha`, with `a` and `b` normalized to unit scale. Returns `None` when the
    elimination is degenerate.
    """
    a1, a2, a3, a4, a5, a6 = a
    b1, b2, b3, b4, b5, b6 = b
    if max(abs(a1), abs(b1)) <= DEGENERACY:
        return None
    numerator = np.array([a1 * b2 - a2 * b1, a1 * b5 - a5 * b1, a1 * b6 - a6 * b1])
    denominator = np.array([a3 * b1 - a1 * b3, a4 * b1 - a1 * b4])
    # substitute into the component whose alpha^2 coefficient is nonzero
    p1, p2, p3, p4, p5, p6 = a if abs(a1) >= abs(b1) else b
    quartic = np.polyadd(
        np.polyadd(p1 * np.polymul(numerator, numerator), np.polymul([p3, p4], np.polymul(numerator, denominator))),
        np.polymul([p2, p5, p6], np.polymul(denominator, denominator)),
    )
    gamma = np.concatenate([np.zeros(5 - len(quartic)), quartic])
    if np.max(np.abs(gamma)) <= DEGENERACY:
        return None
    betas, converged = ferrari_roots(*gamma)
    if not converged:
        return None
    points = []
    for beta in betas:
        if beta < -SIMPLEX_TOLERANCE or beta > 1.0 + SIMPLEX_TOLERANCE:
            continue
        d = np.polyval(denominator, beta)
        if abs(d) > NEAR_POLE:
            points.append((np.polyval(numerator, beta) / d, beta))
            continue
        # near a root of the denominator alpha is fixed by the substituted component alone
        for alpha in solve_quadratic(p1, p3 * beta + p4, p2 * beta * beta + p5 * beta + p6):
            points.append((alpha, beta))
    return points


def _gradient_and_hessian(h: np.ndarray, alpha: np.ndarray, beta: np.ndarray):
    ca = P.polyder(h, axis=0)
    cb = P.polyder(h, axis=1)
    ga = P.polyval2d(alpha, beta, ca)
    gb = P.polyval2d(alpha, beta, cb)
    haa = P.polyval2d(alpha, beta, P.polyder(ca, axis=0))
    hab = P.polyval2d(alpha, beta, P.polyder(ca, axis=1))
    hbb = P.polyval2d(alpha, beta, P.polyder(cb, axis=1))
    return ga, gb, haa, hab, hbb


def _newton(h: np.ndarray, alpha: np.ndarray, beta: np.ndarray, iterations: int) -> Tuple[np.ndarray, np.ndarray]:
    alpha = np.array(alpha, dtype=np.float64)
    beta = np.array(beta, dtype=np.float64)
    for _ in range(iterations):
        ga, gb, haa, hab, hbb = _gradient_and_hessian(h, alpha, beta)
        det = haa * hbb - hab * hab
        ok = np.abs(det) > 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            step_a = np.where(ok, (hbb * ga - hab * gb) / det, 0.0)
            step_b = np.where(ok, (haa * gb - hab * ga) / det, 0.0)
        step_a = np.where(np.isfinite(step_a), step_a, 0.0)
        step_b = np.where(np.isfinite(step_b), step_b, 0.0)
        alpha, beta = alpha - step_a, beta - step_b
    return alpha, beta


def _gradient_norm(h: np.ndarray, alpha, beta) -> np.ndarray:
    ga = P.polyval2d(alpha, beta, P.polyder(h, axis=0))
    gb = P.polyval2d(alpha, beta, P.polyder(h, axis=1))
    return np.hypot(ga, gb)


def _polish(h: np.ndarray, alpha: float, beta: float) -> Tuple[float, float]:
    polished_a, polished_b = _newton(h, [alpha], [beta], POLISH_STEPS)
    before = _gradient_norm(h, alpha, beta)
    after = _gradient_norm(h, polished_a[0], polished_b[0])
    if np.isfinite(after) and after < before:
        return float(polished_a[0]), float(polished_b[0])
    return alpha, beta


def _newton_grid(h: np.ndarray, scale: float) -> List[Tuple[float, float]]:
    """
    Critical points reached by Newton iterations started from a regular grid over the simplex. Starts converging to
    the same point are collapsed before the final vectorized polish, and of the points left inside the simplex only
    one per distinct value of `h` is kept.
    """
    ticks = (np.arange(NEWTON_GRID) + 0.5) / NEWTON_GRID
    alpha, beta = np.meshgrid(ticks, ticks, indexing="ij")
    inside = alpha + beta < 1.0
    alpha, beta = alpha[inside], beta[inside]
    tolerance = GRADIENT_TOLERANCE * scale
    if np.all(_gradient_norm(h, alpha, beta) <= tolerance):
        # h is constant over the simplex
        return []
    alpha, beta = _newton(h, alpha, beta, NEWTON_ITERATIONS)
    residual = _gradient_norm(h, alpha, beta)
    converged = np.isfinite(residual) & (residual <= tolerance)
    if not np.any(converged):
        return []
    found = np.column_stack([alpha[converged], beta[converged]])
    _, first = np.unique(np.round(found / GRID_MERGE), axis=0, return_index=True)
    found = found[np.sort(first)]
    polished_a, polished_b = _newton(h, found[:, 0], found[:, 1], POLISH_STEPS)
    improved = _gradient_norm(h, polished_a, polished_b) < _gradient_norm(h, found[:, 0], found[:, 1])
    found[improved, 0] = polished_a[improved]
    found[improved, 1] = polished_b[improved]
    found = found[
        (found[:, 0] >= -SIMPLEX_TOLERANCE)
        & (found[:, 1] >= -SIMPLEX_TOLERANCE)
        & (found.sum(axis=1) <= 1.0 + SIMPLEX_TOLERANCE)
    ]
    # h is constant along a curve of critical points
    values = P.polyval2d(found[:, 0], found[:, 1], h)
    _, first = np.unique(np.round(values / (GRID_MERGE * np.abs(h).sum())), return_index=True)
    found = found[np.sort(first)]
    return list(zip(found[:, 0].tolist(), found[:, 1].tolist()))


def _in_simplex(alpha: float, beta: float) -> bool:
    return alpha >= -SIMPLEX_TOLERANCE and beta >= -SIMPLEX_TOLERANCE and alpha + beta <= 1.0 + SIMPLEX_TOLERANCE


def _clamp(alpha: float, beta: float) -> Tuple[float, float]:
    alpha, beta = max(alpha, 0.0), max(beta, 0.0)
    total = alpha + beta
    if total > 1.0:
        alpha, beta = alpha / total, beta / total
    return alpha, beta


def _dedupe(points: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    kept: List[Tuple[float, float]] = []
    for alpha, beta in sorted(points):
        if any(np.hypot(alpha - a, beta - b) < MERGE_DISTANCE for a, b in kept):
            continue
        kept.append((alpha, beta))
    return kept


def solve_interior(h: np.ndarray) -> Tuple[List[Tuple[float, float]], bool]:
    """
    Interior critical points of the bivariate cubic `h` inside the unit simplex, and whether the Newton grid was
    needed.
    """
    a = _gradient_coefficients(P.polyder(h, axis=0))
    b = _gradient_coefficients(P.polyder(h, axis=1))
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if scale == 0.0:
        return [], False
    a, b = a / scale, b / scale

    used_grid = False
    if max(np.max(np.abs(a[:3])), np.max(np.abs(b[:3]))) <= DEGENERACY:
        # gradient is affine: one critical point at most
        det = a[3] * b[4] - a[4] * b[3]
        if abs(det) <= DEGENERACY:
            return [], False
        points = [((a[4] * b[5] - a[5] * b[4]) / det, (a[5] * b[3] - a[3] * b[5]) / det)]
    else:
        points = _eliminate(a, b)
        if points is None:
            swapped = _eliminate(_swap(a), _swap(b))
            points = None if swapped is None else [(alpha, beta) for beta, alpha in swapped]
        if points is None:
            points = _newton_grid(h, scale)
            used_grid = True

    result = []
    for alpha, beta in points:
        if not used_grid:
            alpha, beta = _polish(h, alpha, beta)
        if _in_simplex(alpha, beta):
            result.append(_clamp(alpha, beta))
    return _dedupe(result), used_grid


def interior_critical_points(t: Sequence[float], triangle: np.ndarray) -> List[Tuple[float, float]]:
    """
    Critical points `(alpha, beta)` of the trilinear form `t0..t7` restricted to a triangle given in cell-local
    coordinates, limited to the closed triangle.
    """
    points, _ = solve_interior(trilinear_polynomial(t, triangle))
    return points


def edge_restrictions(h: np.ndarray) -> List[Tuple[np.ndarray, Callable[[float], Tuple[float, float]]]]:
    """Ascending coefficients of `h` along the three edges and the map from the edge parameter to `(alpha, beta)`."""
    along_alpha = h[:, 0].copy()
    along_beta = h[0, :].copy()
    diagonal = np.zeros(1)
    for i in range(4):
        for j in range(4 - i):
            if h[i, j] != 0.0:
                term = P.polymul(P.polypow([0.0, 1.0], i), P.polypow([1.0, -1.0], j))
                diagonal = P.polyadd(diagonal, h[i, j] * term)
    return [
        (along_alpha, lambda s: (s, 0.0)),
        (along_beta, lambda s: (0.0, s)),
        (diagonal, lambda s: (s, 1.0 - s)),
    ]


def solve_edges(h: np.ndarray) -> List[Tuple[float, float]]:
    points = []
    for coefficients, to_barycentric in edge_restrictions(h):
        derivative = np.zeros(3)
        d = P.polyder(coefficients) if len(coefficients) > 1 else np.zeros(1)
        derivative[: min(3, len(d))] = d[:3]
        for s in solve_quadratic(derivative[2], derivative[1], derivative[0]):
            if -SIMPLEX_TOLERANCE <= s <= 1.0 + SIMPLEX_TOLERANCE:
                points.append(to_barycentric(min(max(s, 0.0), 1.0)))
    return points


def boundary_critical_points(t: Sequence[float], triangle: np.ndarray) -> List[Tuple[float, float]]:
    """Critical points of the restrictions of the trilinear form to the edges `beta = 0`, `alpha = 0` and
    `alpha + beta = 1`."""
    return solve_edges(trilinear_polynomial(t, triangle))


def _face_candidates(field: ImplicitField, triangle: np.ndarray, face_id: int) -> Tuple[np.ndarray, int]:
    svo = field.svo
    width = svo.cell_width(0)
    pieces = split_triangle(triangle, svo)
    if not pieces:
        return np.zeros(0, dtype=CANDIDATE_DTYPE), 0
    coefficients = field.trilinear_coefficients(np.array([p.cell for p in pieces], dtype=np.uint64))
    origins = decode_lattice(np.array([p.cell for p in pieces], dtype=np.uint64)) * width
    rows = []
    fallback = 0
    for sub_id, (piece, t, origin) in enumerate(zip(pieces, coefficients, origins)):
        found = [(alpha, beta, KIND_CODES[CandidateKind.VERTEX]) for alpha, beta in VERTEX_COORDINATES]
        corners = piece.corners
        area = triangle_areas(corners[0:1], corners[1:2], corners[2:3])[0]
        if area >= SLIVER_AREA:
            h = trilinear_polynomial(t, (corners - origin) / width)
            interior, used_grid = solve_interior(h)
            fallback += int(used_grid)
            found += [(alpha, beta, KIND_CODES[CandidateKind.INTERIOR]) for alpha, beta in interior]
            found += [(alpha, beta, KIND_CODES[CandidateKind.EDGE]) for alpha, beta in solve_edges(h)]
        for alpha, beta, kind in found:
            position = alpha * corners[0] + beta * corners[1] + (1.0 - alpha - beta) * corners[2]
            rows.append((face_id, sub_id, kind, alpha, beta, *position, 0.0))
    table = np.array(rows, dtype=CANDIDATE_DTYPE)
    table["value"] = field.evaluate_many(np.stack([table["x"], table["y"], table["z"]], axis=1))
    return table, fallback


def _check_unit_space(mesh: TriangleMesh):
    low, high = mesh.bounds
    if np.any(low < -UNIT_TOLERANCE) or np.any(high > 1.0 + UNIT_TOLERANCE):
        raise SpaceMismatchError("Mesh is not in unit coordinates, normalize it with the field's transform first")


def _collect(field: ImplicitField, mesh: TriangleMesh, threads: Optional[int]) -> Tuple[np.ndarray, int]:
    _check_unit_space(mesh)
    triangles = mesh.triangles

    def process(part: slice) -> Tuple[np.ndarray, int]:
        tables, fallback = [], 0
        for face_id in range(part.start, part.stop):
            table, used = _face_candidates(field, triangles[face_id], face_id)
            tables.append(table)
            fallback += used
        return np.concatenate(tables) if tables else np.zeros(0, dtype=CANDIDATE_DTYPE), fallback

    parts = map_chunks(process, len(triangles), threads, chunk=FACE_CHUNK)
    if not parts:
        return np.zeros(0, dtype=CANDIDATE_DTYPE), 0
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts)


def collect_candidates(field: ImplicitField, mesh: TriangleMesh, threads: Optional[int] = None) -> np.ndarray:
    """
    Every candidate point of every face as a structured array with the fields of `CANDIDATE_DTYPE`.

    :param field: the solved field.
    :param mesh: the mesh in unit coordinates.
    :param threads: worker threads; the table order does not depend on it.
    """
    table, _ = _collect(field, mesh, threads)
    return table


def to_candidate_points(table: np.ndarray) -> List[CandidatePoint]:
    return [
        CandidatePoint(
            face_id=int(row["face_id"]),
            sub_tri_id=int(row["sub_tri_id"]),
            barycentric=(float(row["alpha"]), float(row["beta"])),
            position=(float(row["x"]), float(row["y"]), float(row["z"])),
            kind=KINDS[int(row["kind"])],
            value=float(row["value"]),
        )
        for row in table
    ]


def compute_shell_interval(
    field: ImplicitField, mesh: TriangleMesh, threads: Optional[int] = None
) -> ShellInterval:
    """
    Minimum and maximum of the field over the surface, taken over all candidate points. The interval is stored in
    `field.shell` and returned.

    :param field: the solved field.
    :param mesh: the mesh in unit coordinates.
    :param threads: worker threads for the per-face enumeration.
    """
    table, fallback = _collect(field, mesh, threads)
    kinds = table["kind"]
    counts = CandidateCounts(
        interior=int(np.sum(kinds == KIND_CODES[CandidateKind.INTERIOR])),
        edge=int(np.sum(kinds == KIND_CODES[CandidateKind.EDGE])),
        vertex=int(np.sum(kinds == KIND_CODES[CandidateKind.VERTEX])),
        fallback_triangles=fallback,
    )
    shell = ShellInterval(eps1=float(table["value"].min()), eps2=float(table["value"].max()), candidates=counts)
    if field.mode == DistanceMode.SIGNED and shell.same_sign:
        warnings.warn(
            f"Shell extremes have the same sign (eps1={shell.eps1:.3e}, eps2={shell.eps2:.3e}), "
            f"a finer octree height usually fixes this"
        )
    field.shell = shell
    return shell


def write_candidates_csv(path: Union[str, pathlib.Path], table: np.ndarray):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["faceId", "kind", "alpha", "beta", "x", "y", "z", "f"])
        for row in table:
            writer.writerow(
                [
                    int(row["face_id"]),
                    KINDS[int(row["kind"])].value,
                    repr(float(row["alpha"])),
                    repr(float(row["beta"])),
                    repr(float(row["x"])),
                    repr(float(row["y"])),
                    repr(float(row["z"])),
                    repr(float(row["value"])),
                ]
            )


def validate_containment(
    field: ImplicitField, mesh: TriangleMesh, samples: int = 10000, seed: int = 0
) -> ValidationReport:
    """
    Fraction of area-weighted surface samples inside the shell. For signed fields the check is
    `eps1 <= f <= eps2`; for unsigned fields it is `0 <= f <= max(|eps1|, |eps2|)`.

    :param field: field with a computed shell.
    :param mesh: the mesh in unit coordinates.
    :param samples: number of surface samples.
    :param seed: sampling seed.
    """
    if field.shell is None:
        raise MissingShellError("Containment validation needs the shell interval of the field")
    _check_unit_space(mesh)
    values = field.evaluate_many(sample_surface(mesh, samples, seed).positions)
    shell = field.shell
    if field.mode == DistanceMode.SIGNED:
        lower, upper = shell.eps1, shell.eps2
    else:
        lower, upper = 0.0, shell.unsigned_bound
    inside = (values >= lower) & (values <= upper)
    return ValidationReport(samples=samples, inside=int(np.sum(inside)), lower=lower, upper=upper)
