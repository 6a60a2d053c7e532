from __future__ import annotations

import functools
import warnings
from typing import Iterable, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from thinshell.exceptions import DegenerateMeshError, InvalidParameterError, MeshLoadError
from thinshell.mesh.bvh import BoundingVolumeHierarchy
from thinshell.mesh.formats import PathLike, read_mesh_arrays, write_obj
from thinshell.models import DistanceMode
from thinshell.utils.geometry import triangle_areas

DEFAULT_MARGIN = 1.0 / 16.0
# faces below this area (relative to the squared bounding-box diagonal) are considered degenerate
DEGENERATE_AREA = 1e-16
# approximate winding numbers inside this band are recomputed with the exact sum
AMBIGUOUS_WINDING = (0.25, 0.75)


class UnitTransform(BaseModel):
    """Uniform scale followed by a translation, mapping model coordinates `x` to unit coordinates `scale * x + t`."""

    model_config = ConfigDict(frozen=True)

    scale: float = Field(1.0, gt=0)
    translate: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def identity(cls) -> UnitTransform:
        return cls()

    def to_unit(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(self.translate)

    def to_model(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.translate)) / self.scale


class SurfaceSamples(NamedTuple):
    face_ids: np.ndarray
    barycentric: np.ndarray
    positions: np.ndarray


class TriangleMesh:
    def __init__(self, vertices: np.ndarray, faces: np.ndarray, dropped_faces: Iterable[int] = ()):
        """
        Indexed triangle surface. The arrays are validated and stored as read-only copies, the acceleration structure
        is built on first use.

        :param vertices: array of shape `(n, 3)` with the positions.
        :param faces: array of shape `(m, 3)` with the vertex indices of each triangle.
        :param dropped_faces: indices (in the input numbering) of faces removed while loading.
        """
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise MeshLoadError("Mesh contains non-finite vertex coordinates")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise MeshLoadError(f"Face index out of range for a mesh with {len(vertices)} vertices")
        vertices.setflags(write=False)
        faces.setflags(write=False)
        self.vertices = vertices
        self.faces = faces
        self.dropped_faces = tuple(int(i) for i in dropped_faces)

    @classmethod
    def from_arrays(cls, vertices: np.ndarray, faces: np.ndarray) -> TriangleMesh:
        """Builds a mesh, dropping zero-area faces with a warning. Raises when no face is left."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) == 0:
            raise MeshLoadError("Mesh has no faces")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise MeshLoadError(f"Face index out of range for a mesh with {len(vertices)} vertices")
        diagonal = np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0))
        areas = triangle_areas(vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]])
        degenerate = areas <= DEGENERATE_AREA * max(diagonal * diagonal, np.finfo(float).tiny)
        dropped = np.flatnonzero(degenerate)
        if dropped.size:
            warnings.warn(f"Dropped {dropped.size} zero-area faces: {dropped.tolist()[:10]}")
        kept = faces[~degenerate]
        if len(kept) == 0:
            raise MeshLoadError("Mesh has no faces with a positive area")
        return cls(vertices, kept, dropped)

    def __repr__(self):
        return f"TriangleMesh(vertices={len(self.vertices)}, faces={len(self.faces)})"

    @property
    def triangles(self) -> np.ndarray:
        """Corners of every face, shape `(m, 3, 3)`."""
        return self.vertices[self.faces]

    @functools.cached_property
    def bvh(self) -> BoundingVolumeHierarchy:
        return BoundingVolumeHierarchy(self.triangles)

    @property
    def face_areas(self) -> np.ndarray:
        tri = self.triangles
        return triangle_areas(tri[:, 0], tri[:, 1], tri[:, 2])

    @property
    def face_normals(self) -> np.ndarray:
        tri = self.triangles
        normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return normals / np.linalg.norm(normals, axis=1, keepdims=True)

    @property
    def bounds(self) -> np.ndarray:
        """Axis-aligned bounding box as a `(2, 3)` array of minimum and maximum corners."""
        return np.vstack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def edges(self) -> np.ndarray:
        """Undirected unique edges as sorted vertex pairs, shape `(e, 2)`."""
        return np.unique(np.sort(self._half_edges(), axis=1), axis=0)

    def _half_edges(self) -> np.ndarray:
        return self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)

    def edge_face_counts(self) -> Tuple[np.ndarray, np.ndarray]:
        edges, counts = np.unique(np.sort(self._half_edges(), axis=1), axis=0, return_counts=True)
        return edges, counts

    @property
    def boundary_edges(self) -> np.ndarray:
        """Edges used by exactly one face."""
        edges, counts = self.edge_face_counts()
        return edges[counts == 1]

    @property
    def is_watertight(self) -> bool:
        _, counts = self.edge_face_counts()
        return bool(np.all(counts == 2))

    def transformed(self, transform: UnitTransform) -> TriangleMesh:
        """The same mesh with vertices mapped to unit coordinates."""
        return TriangleMesh(transform.to_unit(self.vertices), self.faces, self.dropped_faces)


def load_mesh(path: PathLike) -> TriangleMesh:
    """
    Loads an OBJ, STL or PLY file. Polygons are fan-triangulated and zero-area faces dropped, both with a warning.

    :param path: path of the mesh file; the format is chosen by the suffix.
    :return: the loaded mesh, with the vertex order of the file.
    """
    vertices, faces = read_mesh_arrays(path)
    if len(vertices) == 0 or len(faces) == 0:
        raise MeshLoadError(f"Mesh file {path} is empty")
    return TriangleMesh.from_arrays(vertices, faces)


def save_mesh(mesh: TriangleMesh, path: PathLike):
    write_obj(path, mesh.vertices, mesh.faces)


def normalize_to_unit(mesh: TriangleMesh, margin: float = DEFAULT_MARGIN) -> Tuple[TriangleMesh, UnitTransform]:
    """
    Scales the mesh uniformly so that its longest bounding-box axis spans `1 - 2 * margin`, and centers it in the unit
    cube.

    :param mesh: mesh in model coordinates.
    :param margin: empty space kept on each side, in `[0, 0.25)`.
    :return: the normalized mesh and the transform that produced it.
    """
    if not 0 <= margin < 0.25:
        raise InvalidParameterError(f"Margin must be in [0, 0.25), got {margin}")
    if len(mesh.faces) == 0:
        raise DegenerateMeshError("Cannot normalize an empty mesh")
    low, high = mesh.bounds
    extent = float(np.max(high - low))
    if not extent > 0:
        raise DegenerateMeshError("Mesh bounding box has zero extent")
    scale = (1.0 - 2.0 * margin) / extent
    center = 0.5 * (low + high)
    transform = UnitTransform(scale=scale, translate=tuple(float(t) for t in 0.5 - scale * center))
    return mesh.transformed(transform), transform


def closest_points(mesh: TriangleMesh, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distances, closest points and face ids for a batch of points."""
    return mesh.bvh.closest_points(points)


def closest_point_distance(mesh: TriangleMesh, p: np.ndarray) -> Tuple[float, np.ndarray]:
    distances, closest, _ = closest_points(mesh, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return float(distances[0]), closest[0]


def winding_numbers(mesh: TriangleMesh, points: np.ndarray, accuracy: Optional[float] = 2.0) -> np.ndarray:
    """
    Generalized winding numbers of a batch of points. With `accuracy=None` every face contributes its exact solid
    angle; otherwise far-away groups of faces are approximated by their dipole.
    """
    return mesh.bvh.winding_numbers(points, accuracy)


def winding_number(mesh: TriangleMesh, p: np.ndarray) -> float:
    """Exact generalized winding number: `1 / (4 pi)` times the sum of the signed solid angles of all faces."""
    return float(mesh.bvh.exact_winding_numbers(np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def inside_mask(mesh: TriangleMesh, points: np.ndarray) -> np.ndarray:
    """Winding number above one half, resolving approximate values near one half with the exact sum."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    winding = winding_numbers(mesh, points)
    low, high = AMBIGUOUS_WINDING
    ambiguous = (winding >= low) & (winding <= high)
    if ambiguous.any():
        winding[ambiguous] = mesh.bvh.exact_winding_numbers(points[ambiguous])
    return winding > 0.5


def signed_distances(
    mesh: TriangleMesh, points: np.ndarray, mode: Union[DistanceMode, str] = DistanceMode.SIGNED
) -> np.ndarray:
    """
    Distance to the surface, negative inside for the signed mode.

    :param mesh: the surface.
    :param points: array of shape `(n, 3)` in the coordinates of the mesh.
    :param mode: `signed` uses the winding number for the sign, `unsigned` returns the plain distance.
    """
    mode = DistanceMode(mode)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    distances, _, _ = closest_points(mesh, points)
    if mode == DistanceMode.UNSIGNED:
        return distances
    return np.where(inside_mask(mesh, points), -distances, distances)


def signed_distance(mesh: TriangleMesh, p: np.ndarray, mode: Union[DistanceMode, str] = DistanceMode.SIGNED) -> float:
    return float(signed_distances(mesh, np.asarray(p).reshape(1, 3), mode)[0])


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> SurfaceSamples:
    """
    Area-weighted uniform samples over the surface, reproducible for a given seed.

    The barycentric pair `(alpha, beta)` places a sample at `alpha * v1 + beta * v2 + (1 - alpha - beta) * v3`.

    :param mesh: the surface to sample.
    :param n: number of samples, at least one.
    :param seed: seed of the random generator.
    """
    if n < 1:
        raise InvalidParameterError(f"Number of samples must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    face_ids = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r = rng.random((n, 2))
    flip = r.sum(axis=1) > 1.0
    r[flip] = 1.0 - r[flip]
    tri = mesh.triangles[face_ids]
    alpha, beta = r[:, 0:1], r[:, 1:2]
    positions = alpha * tri[:, 0] + beta * tri[:, 1] + (1.0 - alpha - beta) * tri[:, 2]
    return SurfaceSamples(face_ids, r, positions)


__all__ = [
    "DEFAULT_MARGIN",
    "SurfaceSamples",
    "TriangleMesh",
    "UnitTransform",
    "closest_point_distance",
    "closest_points",
    "inside_mask",
    "load_mesh",
    "normalize_to_unit",
    "sample_surface",
    "save_mesh",
    "signed_distance",
    "signed_distances",
    "winding_number",
    "winding_numbers",
]
