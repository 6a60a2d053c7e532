"""
Sparse voxel octree built bottom-up from the voxelized surface.

Depth 0 holds the finest cells, of width `2^-K`, and depth `K` holds the single root cell `[0, 1]^3`. Cells and grid
points are keyed by the Morton code of their integer lattice coordinates at their own depth and stored as sorted
`uint64` arrays, so membership and lookup are binary searches.
"""

from __future__ import annotations

from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from thinshell.exceptions import InvalidParameterError
from thinshell.mesh import TriangleMesh
from thinshell.utils.concurrency import map_chunks
from thinshell.utils.geometry import triangle_box_overlap

MIN_HEIGHT = 2
MAX_HEIGHT = 12
VOXELIZE_CHUNK = 1024

CORNER_OFFSETS = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=np.int64)

_U = np.uint64


class CellKey(NamedTuple):
    depth: int
    morton: int


def _split_by_3(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v).astype(np.uint64) & _U(0x1FFFFF)
    v = (v | (v << _U(32))) & _U(0x1F00000000FFFF)
    v = (v | (v << _U(16))) & _U(0x1F0000FF0000FF)
    v = (v | (v << _U(8))) & _U(0x100F00F00F00F00F)
    v = (v | (v << _U(4))) & _U(0x10C30C30C30C30C3)
    v = (v | (v << _U(2))) & _U(0x1249249249249249)
    return v


def _compact_by_3(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.uint64) & _U(0x1249249249249249)
    v = (v ^ (v >> _U(2))) & _U(0x10C30C30C30C30C3)
    v = (v ^ (v >> _U(4))) & _U(0x100F00F00F00F00F)
    v = (v ^ (v >> _U(8))) & _U(0x1F0000FF0000FF)
    v = (v ^ (v >> _U(16))) & _U(0x1F00000000FFFF)
    v = (v ^ (v >> _U(32))) & _U(0x1FFFFF)
    return v


def encode_lattice(lattice: np.ndarray) -> np.ndarray:
    """Morton codes of integer lattice coordinates of shape `(n, 3)`, x in the lowest bit."""
    lattice = np.asarray(lattice).reshape(-1, 3)
    return _split_by_3(lattice[:, 0]) | (_split_by_3(lattice[:, 1]) << _U(1)) | (_split_by_3(lattice[:, 2]) << _U(2))


def decode_lattice(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64).reshape(-1)
    return np.stack(
        [_compact_by_3(codes), _compact_by_3(codes >> _U(1)), _compact_by_3(codes >> _U(2))], axis=1
    ).astype(np.int64)


def morton_encode(i: int, j: int, k: int, depth: int = 0, height: int = MAX_HEIGHT) -> CellKey:
    """
    Key of the cell with lattice coordinates `(i, j, k)` at `depth` in an octree of the given height.

    >>> morton_encode(1, 1, 1)
    CellKey(depth=0, morton=7)
    """
    size = 1 << (height - depth)
    if not (0 <= i < size and 0 <= j < size and 0 <= k < size):
        raise InvalidParameterError(f"Lattice coordinate ({i}, {j}, {k}) out of range [0, {size}) at depth {depth}")
    return CellKey(depth, int(encode_lattice(np.array([[i, j, k]]))[0]))


def morton_decode(key: CellKey) -> Tuple[int, int, int]:
    i, j, k = decode_lattice(np.array([key.morton], dtype=np.uint64))[0]
    return int(i), int(j), int(k)


def check_height(height: int, low: int = MIN_HEIGHT):
    if not low <= height <= MAX_HEIGHT:
        raise InvalidParameterError(f"Octree height K must be in [{low}, {MAX_HEIGHT}], got {height}")


def _member(sorted_codes: np.ndarray, codes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Positions of `codes` in `sorted_codes` and whether they are present."""
    if len(sorted_codes) == 0:
        return np.zeros(len(codes), dtype=np.int64), np.zeros(len(codes), dtype=bool)
    index = np.searchsorted(sorted_codes, codes)
    clipped = np.minimum(index, len(sorted_codes) - 1)
    return clipped, sorted_codes[clipped] == codes


def voxelize(mesh: TriangleMesh, height: int, threads: Optional[int] = None) -> np.ndarray:
    """
    Conservative voxelization: a depth-0 cell is kept when its closed cube overlaps a triangle.

    :param mesh: mesh in unit coordinates.
    :param height: octree height `K` in `[2, 12]`.
    :param threads: worker threads for the per-triangle tests.
    :return: sorted Morton codes of the occupied depth-0 cells.
    """
    check_height(height)
    size = 1 << height
    width = 1.0 / size
    triangles = mesh.triangles
    lows = np.clip(np.floor(triangles.min(axis=1) / width).astype(np.int64) - 1, 0, size - 1)
    highs = np.clip(np.floor(triangles.max(axis=1) / width).astype(np.int64), 0, size - 1)

    def occupied(part: slice) -> np.ndarray:
        found = []
        for tri, low, high in zip(triangles[part], lows[part], highs[part]):
            axes = [np.arange(low[a], high[a] + 1) for a in range(3)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
            centers = (grid + 0.5) * width
            found.append(grid[triangle_box_overlap(tri, centers, 0.5 * width)])
        if not found:
            return np.zeros(0, dtype=np.uint64)
        return np.unique(encode_lattice(np.vstack(found)))

    parts = map_chunks(occupied, len(triangles), threads, chunk=VOXELIZE_CHUNK)
    return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.uint64)


class SparseVoxelOctree:
    def __init__(self, height: int, cells: List[np.ndarray]):
        """
        Octree from its per-depth cell codes. Use `build_svo` to construct one from leaf cells; this constructor only
        derives the grid points.

        :param height: the octree height `K`.
        :param cells: `K + 1` sorted arrays of Morton codes, one per depth.
        """
        if len(cells) != height + 1:
            raise InvalidParameterError(f"Expected {height + 1} cell levels, got {len(cells)}")
        self.height = height
        self.cells = [np.unique(np.asarray(c, dtype=np.uint64)) for c in cells]
        self.grid_points = [self._corner_codes(depth) for depth in range(height + 1)]
        counts = [len(g) for g in self.grid_points]
        self.grid_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def __repr__(self):
        return f"SparseVoxelOctree(height={self.height}, cells={self.cell_counts})"

    def _corner_codes(self, depth: int) -> np.ndarray:
        lattice = decode_lattice(self.cells[depth])
        corners = (lattice[:, None, :] + CORNER_OFFSETS[None, :, :]).reshape(-1, 3)
        return np.unique(encode_lattice(corners))

    def cell_width(self, depth: int) -> float:
        return 2.0 ** (depth - self.height)

    def lattice_size(self, depth: int) -> int:
        """Number of cells per axis at `depth`."""
        return 1 << (self.height - depth)

    @property
    def cell_counts(self) -> List[int]:
        return [len(c) for c in self.cells]

    @property
    def grid_point_counts(self) -> List[int]:
        return [len(g) for g in self.grid_points]

    @property
    def total_grid_points(self) -> int:
        return int(self.grid_offsets[-1])

    def contains(self, key: CellKey) -> bool:
        if not 0 <= key.depth <= self.height:
            return False
        _, found = _member(self.cells[key.depth], np.array([key.morton], dtype=np.uint64))
        return bool(found[0])

    def has_cells(self, depth: int, codes: np.ndarray) -> np.ndarray:
        return _member(self.cells[depth], np.asarray(codes, dtype=np.uint64))[1]

    def grid_point_index(self, depth: int, codes: np.ndarray) -> np.ndarray:
        """Global row index (depth-major, then Morton) of grid points at `depth`, or `-1` where absent."""
        index, found = _member(self.grid_points[depth], np.asarray(codes, dtype=np.uint64))
        return np.where(found, index + self.grid_offsets[depth], -1)

    def grid_point_positions(self, depth: int) -> np.ndarray:
        return decode_lattice(self.grid_points[depth]).astype(np.float64) * self.cell_width(depth)

    def containing_lattice(self, points: np.ndarray, depth: int) -> np.ndarray:
        """
        Lattice coordinates of the cell containing each point at `depth`, using half-open cells with the coordinate
        `1.0` assigned to the last cell. Points must lie in `[0, 1]^3`.
        """
        size = self.lattice_size(depth)
        lattice = np.floor(np.asarray(points, dtype=np.float64) * size).astype(np.int64)
        return np.clip(lattice, 0, size - 1)

    def locate_cells(self, points: np.ndarray, depth: int) -> Tuple[np.ndarray, np.ndarray]:
        """Morton codes of the containing cells at `depth` and whether those cells exist."""
        codes = encode_lattice(self.containing_lattice(points, depth))
        return codes, self.has_cells(depth, codes)


def build_svo(leaf_cells: np.ndarray, height: int) -> SparseVoxelOctree:
    """
    Completes the leaf cells into an octree: at every depth all eight children of each parent are added, then the
    parents form the next depth, up to the root.

    :param leaf_cells: Morton codes of depth-0 cells.
    :param height: octree height `K`.
    """
    check_height(height, low=1)
    leaves = np.unique(np.asarray(leaf_cells, dtype=np.uint64))
    if leaves.size == 0:
        raise InvalidParameterError("Cannot build an octree without leaf cells")
    if leaves.max() >= _U(8**height):
        raise InvalidParameterError(f"Leaf cell code {int(leaves.max())} out of range for height {height}")
    cells = []
    current = leaves
    for _ in range(height):
        parents = np.unique(current >> _U(3))
        cells.append(((parents[:, None] << _U(3)) | np.arange(8, dtype=np.uint64)[None, :]).reshape(-1))
        current = parents
    cells.append(np.zeros(1, dtype=np.uint64))
    return SparseVoxelOctree(height, cells)


def locate_chain(svo: SparseVoxelOctree, p: np.ndarray) -> Optional[List[CellKey]]:
    """
    Containing cells of `p` at every depth where that cell exists, finest first. Returns `None` when `p` lies outside
    the root cell.
    """
    p = np.asarray(p, dtype=np.float64).reshape(1, 3)
    if np.any(p < 0.0) or np.any(p > 1.0):
        return None
    chain = []
    for depth in range(svo.height + 1):
        codes, found = svo.locate_cells(p, depth)
        if found[0]:
            chain.append(CellKey(depth, int(codes[0])))
    return chain


def collect_grid_points(svo: SparseVoxelOctree, depth: int) -> Tuple[np.ndarray, np.ndarray]:
    """Lattice coordinates and unit positions of the grid points at `depth`, ascending by Morton code."""
    if not 0 <= depth <= svo.height:
        raise InvalidParameterError(f"Depth must be in [0, {svo.height}], got {depth}")
    lattice = decode_lattice(svo.grid_points[depth])
    return lattice, lattice.astype(np.float64) * svo.cell_width(depth)
