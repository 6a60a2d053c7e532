from __future__ import annotations

import warnings
from typing import Callable, NamedTuple, Optional, Union

import mcubes
import numpy as np

from thinshell.exceptions import InvalidParameterError, MissingShellError
from thinshell.field import ImplicitField
from thinshell.mesh import TriangleMesh
from thinshell.utils.concurrency import map_chunks

MIN_RESOLUTION = 16
MAX_RESOLUTION = 512

Evaluator = Callable[[np.ndarray], np.ndarray]


class LevelSetMesh(NamedTuple):
    """Triangulation of the level set `f = level`, in unit coordinates."""

    mesh: TriangleMesh
    level: float

    @property
    def is_empty(self) -> bool:
        return len(self.mesh.faces) == 0


def resolve_level(field: ImplicitField, level: Union[str, float]) -> float:
    """Turns `eps1`, `zero`, `eps2` or a number into a level value."""
    if isinstance(level, (int, float)):
        return float(level)
    if level == "zero":
        return 0.0
    if level in ("eps1", "eps2"):
        if field.shell is None:
            raise MissingShellError(f"Level '{level}' needs the shell interval of the field")
        return field.shell.eps1 if level == "eps1" else field.shell.eps2
    try:
        return float(level)
    except ValueError:
        raise InvalidParameterError(f"Level must be eps1, zero, eps2 or a number, got '{level}'")


def sample_grid(evaluator: Evaluator, resolution: int, threads: Optional[int] = None) -> np.ndarray:
    """Values on the `resolution^3` lattice spanning `[0, 1]^3`, indexed `[i, j, k]` along x, y and z."""
    axis = np.linspace(0.0, 1.0, resolution)
    y, z = np.meshgrid(axis, axis, indexing="ij")
    plane = np.stack([y.reshape(-1), z.reshape(-1)], axis=1)

    def slab(part: slice) -> np.ndarray:
        xs = axis[part]
        points = np.empty((len(xs), len(plane), 3))
        points[:, :, 0] = xs[:, None]
        points[:, :, 1:] = plane[None, :, :]
        return evaluator(points.reshape(-1, 3)).reshape(len(xs), resolution, resolution)

    return np.concatenate(map_chunks(slab, resolution, threads, chunk=8), axis=0)


def marching_cubes(
    field: Union[ImplicitField, Evaluator],
    level: float = 0.0,
    resolution: int = 128,
    threads: Optional[int] = None,
) -> LevelSetMesh:
    """
    Extracts the level set `f = level` over the unit cube with marching cubes on a uniform sampling.

    :param field: the field, or any function mapping unit points of shape `(n, 3)` to values.
    :param level: the level to extract.
    :param resolution: samples per axis, in `[16, 512]`.
    :param threads: worker threads for the sampling.
    :return: the level-set mesh; empty, with a warning, when the level is not crossed on the grid.
    """
    if not MIN_RESOLUTION <= resolution <= MAX_RESOLUTION:
        raise InvalidParameterError(
            f"Resolution must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {resolution}"
        )
    evaluator = field.evaluate_many if isinstance(field, ImplicitField) else field
    volume = sample_grid(evaluator, resolution, threads)
    vertices, faces = mcubes.marching_cubes(volume, float(level))
    if len(faces) == 0:
        warnings.warn(f"Level set f = {level} is empty at resolution {resolution}")
        return LevelSetMesh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), float(level))
    vertices = np.asarray(vertices, dtype=np.float64) / (resolution - 1)
    return LevelSetMesh(TriangleMesh(vertices, np.asarray(faces, dtype=np.int64)), float(level))
