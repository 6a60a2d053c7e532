"""
First-degree tensor-product B-spline field on a sparse voxel octree.

Every grid point `g` at depth `d` carries a coefficient and a hat basis of half-width `w_d = 2^(d-K)` centered at `g`.
The field is the sum of all bases over all depths. Inside a cell of depth `d` only the eight corners of that cell have
a nonzero basis, so evaluation looks up eight corners per depth; corners absent from the octree contribute nothing.
"""

from __future__ import annotations

import time
import warnings
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
import scipy.sparse

from thinshell.exceptions import CellNotFoundError, InvalidParameterError
from thinshell.mesh import TriangleMesh, UnitTransform, signed_distances
from thinshell.models import BuildReport, DistanceMode, ShellInterval, SolveResult
from thinshell.svo import (
    CORNER_OFFSETS,
    CellKey,
    SparseVoxelOctree,
    build_svo,
    decode_lattice,
    encode_lattice,
    voxelize,
)
from thinshell.utils.concurrency import map_chunks

DEFAULT_TOLERANCE = 1e-8
EVALUATION_CHUNK = 65536
AXES = {"x": 0, "y": 1, "z": 2}


def basis_1d(t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Univariate first-degree B-spline: `1 + t` on `[-1, 0]`, `1 - t` on `(0, 1]` and zero elsewhere."""
    return np.maximum(1.0 - np.abs(t), 0.0)


def basis_3d(v: np.ndarray, g: np.ndarray, w: float) -> Union[float, np.ndarray]:
    """Tensor-product basis centered at `g` with cell width `w`, evaluated at `v`."""
    if w <= 0:
        raise InvalidParameterError(f"Cell width must be positive, got {w}")
    t = (np.asarray(v, dtype=np.float64) - np.asarray(g, dtype=np.float64)) / w
    return np.prod(basis_1d(t), axis=-1)


def corner_weights(local: np.ndarray) -> np.ndarray:
    """Trilinear weights of the eight cell corners (ordered as `CORNER_OFFSETS`) for local coordinates in `[0, 1]^3`."""
    weights = np.ones((len(local), 8))
    for corner, offset in enumerate(CORNER_OFFSETS):
        for axis in range(3):
            weights[:, corner] *= local[:, axis] if offset[axis] else 1.0 - local[:, axis]
    return weights


class Stencil(NamedTuple):
    """Grid-point rows and trilinear weights of the eight corners of each point's containing cell at one depth."""

    indices: np.ndarray
    weights: np.ndarray


def depth_stencil(svo: SparseVoxelOctree, points: np.ndarray, depth: int) -> Stencil:
    """
    Global grid-point indices (`-1` when the corner is absent) and basis weights for points in `[0, 1]^3` at `depth`.
    """
    size = svo.lattice_size(depth)
    scaled = points * size
    lattice = svo.containing_lattice(points, depth)
    local = scaled - lattice
    corners = lattice[:, None, :] + CORNER_OFFSETS[None, :, :]
    codes = encode_lattice(corners.reshape(-1, 3))
    indices = svo.grid_point_index(depth, codes).reshape(-1, 8)
    return Stencil(indices, corner_weights(local))


class SparseSystem(NamedTuple):
    """Interpolation system `A lambda = b`: one row and one column per grid point, depth-major then Morton order."""

    matrix: scipy.sparse.csr_matrix
    rhs: np.ndarray


class ImplicitField:
    def __init__(
        self,
        svo: SparseVoxelOctree,
        lambdas: np.ndarray,
        transform: Optional[UnitTransform] = None,
        mode: DistanceMode = DistanceMode.SIGNED,
        shell: Optional[ShellInterval] = None,
    ):
        """
        B-spline field with one coefficient per grid point of the octree.

        :param svo: the octree.
        :param lambdas: coefficients, indexed like the rows of the interpolation system.
        :param transform: map from model to unit coordinates of the mesh the field was built for.
        :param mode: distance mode the field approximates.
        :param shell: the extreme values of the field over the mesh surface, once computed.
        """
        lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
        if len(lambdas) != svo.total_grid_points:
            raise InvalidParameterError(
                f"Expected {svo.total_grid_points} coefficients for the octree, got {len(lambdas)}"
            )
        self.svo = svo
        self.lambdas = lambdas
        self.transform = transform or UnitTransform.identity()
        self.mode = DistanceMode(mode)
        self.shell = shell

    def __repr__(self):
        return f"ImplicitField(K={self.height}, mode={self.mode.value}, grid_points={len(self.lambdas)})"

    @property
    def height(self) -> int:
        return self.svo.height

    def depth_lambdas(self, depth: int) -> np.ndarray:
        offsets = self.svo.grid_offsets
        return self.lambdas[offsets[depth] : offsets[depth + 1]]

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Field values at unit-space points of shape `(n, 3)`; points outside `[0, 1]^3` evaluate to zero."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        values = np.zeros(len(points))
        inside = np.all((points >= 0.0) & (points <= 1.0), axis=1)
        selected = np.flatnonzero(inside)
        for start in range(0, len(selected), EVALUATION_CHUNK):
            rows = selected[start : start + EVALUATION_CHUNK]
            values[rows] = self._evaluate_inside(points[rows])
        return values

    def _evaluate_inside(self, points: np.ndarray) -> np.ndarray:
        total = np.zeros(len(points))
        for depth in range(self.height + 1):
            indices, weights = depth_stencil(self.svo, points, depth)
            coefficients = np.where(indices >= 0, self.lambdas[np.maximum(indices, 0)], 0.0)
            total += np.sum(weights * coefficients, axis=1)
        return total

    def evaluate(self, p: np.ndarray) -> float:
        return float(self.evaluate_many(np.asarray(p, dtype=np.float64).reshape(1, 3))[0])

    def evaluate_model(self, points: np.ndarray) -> np.ndarray:
        """Field values at model-space points."""
        return self.evaluate_many(self.transform.to_unit(points))

    def trilinear_coefficients(self, codes: np.ndarray) -> np.ndarray:
        """
        Coefficients `t0..t7` of `t0 + t1 x + t2 y + t3 z + t4 xy + t5 yz + t6 xz + t7 xyz` in cell-local coordinates
        for depth-0 cells given by their Morton codes; shape `(n, 8)`.
        """
        codes = np.asarray(codes, dtype=np.uint64).reshape(-1)
        found = self.svo.has_cells(0, codes)
        if not np.all(found):
            missing = int(codes[~found][0])
            raise CellNotFoundError(f"Depth-0 cell with Morton code {missing} is not part of the octree")
        lattice = decode_lattice(codes)
        width = self.svo.cell_width(0)
        corners = (lattice[:, None, :] + CORNER_OFFSETS[None, :, :]).reshape(-1, 3) * width
        c = self.evaluate_many(corners).reshape(-1, 8)
        # corner order: index = x + 2 y + 4 z
        c000, c100, c010, c110, c001, c101, c011, c111 = (c[:, i] for i in range(8))
        return np.stack(
            [
                c000,
                c100 - c000,
                c010 - c000,
                c001 - c000,
                c110 - c100 - c010 + c000,
                c011 - c010 - c001 + c000,
                c101 - c100 - c001 + c000,
                c111 - c110 - c101 - c011 + c100 + c010 + c001 - c000,
            ],
            axis=1,
        )


def evaluate(field: ImplicitField, p: np.ndarray) -> float:
    """Field value at a unit-space point, zero outside the root cell."""
    return field.evaluate(p)


def evaluate_many(field: ImplicitField, points: np.ndarray) -> np.ndarray:
    return field.evaluate_many(points)


def cell_trilinear_coeffs(field: ImplicitField, cell: Union[CellKey, int]) -> np.ndarray:
    """Trilinear coefficients `t0..t7` of the field restricted to one depth-0 cell."""
    if isinstance(cell, CellKey):
        if cell.depth != 0:
            raise CellNotFoundError(f"Trilinear coefficients are defined for depth-0 cells, got depth {cell.depth}")
        cell = cell.morton
    return field.trilinear_coefficients(np.array([cell], dtype=np.uint64))[0]


def slice_values(field: ImplicitField, axis: str = "z", offset: float = 0.5, resolution: int = 128) -> np.ndarray:
    """
    Field values on a `resolution x resolution` grid over the plane `axis = offset` of the unit cube. The first array
    index runs along the lower of the two remaining axes.
    """
    if axis not in AXES:
        raise InvalidParameterError(f"Axis must be one of x, y, z, got '{axis}'")
    if not 0.0 <= offset <= 1.0:
        raise InvalidParameterError(f"Slice offset must be in [0, 1], got {offset}")
    if resolution < 2:
        raise InvalidParameterError(f"Slice resolution must be at least 2, got {resolution}")
    fixed = AXES[axis]
    free = [a for a in range(3) if a != fixed]
    u, v = np.meshgrid(np.linspace(0.0, 1.0, resolution), np.linspace(0.0, 1.0, resolution), indexing="ij")
    points = np.empty((resolution * resolution, 3))
    points[:, fixed] = offset
    points[:, free[0]] = u.reshape(-1)
    points[:, free[1]] = v.reshape(-1)
    return field.evaluate_many(points).reshape(resolution, resolution)


def grid_point_positions(svo: SparseVoxelOctree) -> np.ndarray:
    """Unit positions of every grid point in row order."""
    return np.vstack([svo.grid_point_positions(depth) for depth in range(svo.height + 1)])


def assemble_system(
    svo: SparseVoxelOctree,
    mesh: TriangleMesh,
    mode: DistanceMode = DistanceMode.SIGNED,
    threads: Optional[int] = None,
) -> SparseSystem:
    """
    Builds `A[p, q] = B_q(g_p)` and `b[p] = D(g_p, M)` for all grid points of all depths.

    The row of grid point `g_p` is the evaluation stencil at its position, so `A @ lambdas` is the field sampled at the
    grid points.

    :param svo: the octree.
    :param mesh: mesh in the unit coordinates of the octree.
    :param mode: signed or unsigned distance right-hand side.
    :param threads: worker threads for the distance queries.
    """
    positions = grid_point_positions(svo)
    count = len(positions)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    values: List[np.ndarray] = []
    row_ids = np.repeat(np.arange(count), 8).reshape(-1, 8)
    for depth in range(svo.height + 1):
        indices, weights = depth_stencil(svo, positions, depth)
        keep = (indices >= 0) & (weights > 0.0)
        rows.append(row_ids[keep])
        cols.append(indices[keep])
        values.append(weights[keep])
    matrix = scipy.sparse.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(count, count)
    ).tocsr()
    parts = map_chunks(lambda s: signed_distances(mesh, positions[s], mode), count, threads)
    rhs = np.concatenate(parts) if parts else np.zeros(0)
    return SparseSystem(matrix, rhs)


def solve_coefficients(
    system: SparseSystem, tol: float = DEFAULT_TOLERANCE, max_iter: Optional[int] = None
) -> Tuple[np.ndarray, SolveResult]:
    """
    Least-squares solution of `A lambda = b` by conjugate gradients on the normal equations `A^T A lambda = A^T b`
    (CGLS). Stops when `|A^T (b - A lambda)| <= tol |A^T b|` or after `max_iter` iterations, in which case a warning is
    emitted and the last iterate is returned.

    :param system: the assembled system.
    :param tol: relative tolerance on the normal-equation residual.
    :param max_iter: iteration cap, defaults to ten times the number of unknowns.
    :return: the coefficients and a report of the achieved residuals.
    """
    if not tol > 0:
        raise InvalidParameterError(f"Solver tolerance must be positive, got {tol}")
    a, b = system.matrix, system.rhs
    unknowns = a.shape[1]
    max_iter = 10 * unknowns if max_iter is None else max_iter
    if max_iter < 1:
        raise InvalidParameterError(f"Maximum iterations must be at least 1, got {max_iter}")
    x = np.zeros(unknowns)
    r = b.astype(np.float64).copy()
    s = a.T @ r
    p = s.copy()
    gamma = float(s @ s)
    reference = np.sqrt(gamma)
    iterations = 0
    converged = reference == 0.0
    while not converged and iterations < max_iter:
        q = a @ p
        qq = float(q @ q)
        if qq == 0.0:
            break
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        s = a.T @ r
        gamma_next = float(s @ s)
        iterations += 1
        converged = np.sqrt(gamma_next) <= tol * reference
        p = s + (gamma_next / gamma) * p
        gamma = gamma_next

    residual_vector = b - a @ x
    b_norm = np.linalg.norm(b)
    normal_residual = float(np.linalg.norm(a.T @ residual_vector) / reference) if reference > 0 else 0.0
    residual = float(np.linalg.norm(residual_vector) / b_norm) if b_norm > 0 else 0.0
    if not converged:
        warnings.warn(
            f"Least-squares solver stopped after {iterations} iterations with relative normal residual "
            f"{normal_residual:.3e} above the tolerance {tol:.1e}"
        )
    return x, SolveResult(
        iterations=iterations, normal_residual=normal_residual, residual=residual, converged=bool(converged)
    )


def build_field(
    mesh: TriangleMesh,
    height: int,
    mode: DistanceMode = DistanceMode.SIGNED,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: Optional[int] = None,
    transform: Optional[UnitTransform] = None,
    threads: Optional[int] = None,
) -> Tuple[ImplicitField, BuildReport]:
    """
    Voxelizes the unit-space mesh, builds the octree, assembles and solves the interpolation system.

    :param mesh: mesh already normalized to the unit cube.
    :param height: octree height `K` in `[2, 12]`.
    :param mode: signed or unsigned distance.
    :param tol: solver tolerance.
    :param max_iter: solver iteration cap.
    :param transform: the normalization transform, stored in the field.
    :param threads: worker threads for voxelization and distance queries.
    :return: the field (without shell interval) and the build report.
    """
    mode = DistanceMode(mode)
    timings = {}
    start = time.perf_counter()
    leaves = voxelize(mesh, height, threads)
    timings["voxelize"] = time.perf_counter() - start

    start = time.perf_counter()
    svo = build_svo(leaves, height)
    timings["octree"] = time.perf_counter() - start

    start = time.perf_counter()
    system = assemble_system(svo, mesh, mode, threads)
    timings["assemble"] = time.perf_counter() - start

    start = time.perf_counter()
    lambdas, solve = solve_coefficients(system, tol, max_iter)
    timings["solve"] = time.perf_counter() - start

    field = ImplicitField(svo, lambdas, transform, mode)
    report = BuildReport(
        k=height,
        mode=mode,
        faces=len(mesh.faces),
        dropped_faces=len(mesh.dropped_faces),
        cells_per_depth=svo.cell_counts,
        grid_points_per_depth=svo.grid_point_counts,
        solve=solve,
        stage_seconds=timings,
    )
    return field, report
