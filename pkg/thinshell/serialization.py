"""
Binary ITS file, little-endian:

    magic "ITS1" | version u32 | K u32 | mode u8 | scale f64 | tx f64 | ty f64 | tz f64 | shell present u8 |
    eps1 f64 | eps2 f64 | for each depth 0..K: count u64, then count pairs of (morton u64, lambda f64)

Pairs are sorted by Morton code. Cells are not stored: every grid point belongs to a cell of its depth, and the octree
is rebuilt from the depth-0 cells implied by the grid points of depth 0.
"""

from __future__ import annotations

import pathlib
import struct
from typing import Union

import numpy as np

from thinshell.exceptions import InvalidItsFile, MissingShellError
from thinshell.field import ImplicitField
from thinshell.mesh import UnitTransform
from thinshell.models import DistanceMode, ShellInterval
from thinshell.svo import CORNER_OFFSETS, MAX_HEIGHT, SparseVoxelOctree, decode_lattice, encode_lattice

MAGIC = b"ITS1"
VERSION = 1
HEADER = struct.Struct("<4sIIBddddBdd")
COUNT = struct.Struct("<Q")
PAIR_DTYPE = np.dtype([("morton", "<u8"), ("value", "<f8")])


def _cells_from_grid_points(grid_points: np.ndarray, depth: int, height: int, known: np.ndarray) -> np.ndarray:
    """Cells of one depth whose eight corners are all grid points of that depth and whose parent chain is known."""
    size = 1 << (height - depth)
    lattice = decode_lattice(grid_points)
    candidates = lattice[np.all(lattice < size, axis=1)]
    corners = (candidates[:, None, :] + CORNER_OFFSETS[None, :, :]).reshape(-1, 3)
    complete = np.isin(encode_lattice(corners), grid_points).reshape(-1, 8).all(axis=1)
    codes = encode_lattice(candidates[complete])
    # a cell exists only if its parent exists one depth above
    return codes[np.isin(codes >> np.uint64(3), known)]


def save_its(field: ImplicitField, path: Union[str, pathlib.Path], require_shell: bool = False):
    """
    Writes the field to an ITS file.

    :param field: the field to store.
    :param path: destination path.
    :param require_shell: raise `MissingShellError` instead of writing a file flagged as shell-less.
    """
    if field.shell is None and require_shell:
        raise MissingShellError("The shell interval has not been computed for this field")
    shell = field.shell
    transform = field.transform
    header = HEADER.pack(
        MAGIC,
        VERSION,
        field.height,
        field.mode.as_byte(),
        transform.scale,
        *transform.translate,
        1 if shell is not None else 0,
        shell.eps1 if shell is not None else 0.0,
        shell.eps2 if shell is not None else 0.0,
    )
    with open(path, "wb") as f:
        f.write(header)
        for depth in range(field.height + 1):
            codes = field.svo.grid_points[depth]
            pairs = np.empty(len(codes), dtype=PAIR_DTYPE)
            pairs["morton"] = codes
            pairs["value"] = field.depth_lambdas(depth)
            f.write(COUNT.pack(len(pairs)))
            f.write(pairs.tobytes())


def load_its(path: Union[str, pathlib.Path]) -> ImplicitField:
    """
    Reads an ITS file back into a field, rebuilding the octree.

    :raises InvalidItsFile: when the magic bytes or version do not match or when the file is truncated.
    """
    data = pathlib.Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise InvalidItsFile(f"File {path} is truncated: header needs {HEADER.size} bytes, found {len(data)}")
    magic, version, height, mode_byte, scale, tx, ty, tz, has_shell, eps1, eps2 = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidItsFile(f"File {path} does not start with the ITS magic bytes, found {magic!r}")
    if version != VERSION:
        raise InvalidItsFile(f"Unsupported ITS version {version}, expected {VERSION}")
    if not 1 <= height <= MAX_HEIGHT:
        raise InvalidItsFile(f"Octree height {height} in {path} is out of range")
    try:
        mode = DistanceMode.from_byte(mode_byte)
        transform = UnitTransform(scale=scale, translate=(tx, ty, tz))
        shell = ShellInterval(eps1=eps1, eps2=eps2) if has_shell else None
    except ValueError as e:
        raise InvalidItsFile(f"Invalid header in {path}: {e}") from e

    offset = HEADER.size
    grid_points, lambdas = [], []
    for depth in range(height + 1):
        if offset + COUNT.size > len(data):
            raise InvalidItsFile(f"File {path} is truncated before the grid points of depth {depth}")
        (count,) = COUNT.unpack_from(data, offset)
        offset += COUNT.size
        end = offset + count * PAIR_DTYPE.itemsize
        if end > len(data):
            raise InvalidItsFile(f"File {path} is truncated inside the grid points of depth {depth}")
        pairs = np.frombuffer(data, dtype=PAIR_DTYPE, count=count, offset=offset)
        grid_points.append(pairs["morton"].astype(np.uint64))
        lambdas.append(pairs["value"].astype(np.float64))
        offset = end
    if offset != len(data):
        raise InvalidItsFile(f"File {path} has {len(data) - offset} unexpected trailing bytes")

    cells = [np.zeros(0, dtype=np.uint64)] * height + [np.zeros(1, dtype=np.uint64)]
    for depth in range(height - 1, -1, -1):
        cells[depth] = _cells_from_grid_points(grid_points[depth], depth, height, cells[depth + 1])
    svo = SparseVoxelOctree(height, cells)
    for depth in range(height + 1):
        if not np.array_equal(svo.grid_points[depth], grid_points[depth]):
            raise InvalidItsFile(f"Grid points of depth {depth} in {path} do not form a valid octree")
    return ImplicitField(svo, np.concatenate(lambdas), transform, mode, shell)
