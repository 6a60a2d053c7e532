from __future__ import annotations

import pathlib
import warnings
from typing import List, Tuple, Union

import numpy as np
import trimesh

from thinshell.exceptions import MeshLoadError

PathLike = Union[str, pathlib.Path]

SUPPORTED_SUFFIXES = (".obj", ".stl", ".ply")


def _obj_index(token: str, vertex_count: int, line_number: int) -> int:
    # 'v', 'v/vt', 'v//vn' and 'v/vt/vn' all carry the position index first
    head = token.split("/")[0]
    try:
        index = int(head)
    except ValueError:
        raise MeshLoadError(f"Malformed face index '{token}' on line {line_number}")
    if index > 0:
        return index - 1
    elif index < 0:
        return vertex_count + index
    raise MeshLoadError(f"Face index 0 on line {line_number} is not valid, OBJ indices start at 1")


def read_obj(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    Reads the `v` and `f` records of an ASCII OBJ file. Texture coordinates, normals, groups and materials are ignored.
    Polygons with more than three corners are fan-triangulated around their first corner, with a warning.

    :param path: path to the OBJ file.
    :return: the vertices as a `(n, 3)` float array and the faces as a `(m, 3)` integer array.
    """
    vertices: List[Tuple[float, float, float]] = []
    faces: List[Tuple[int, int, int]] = []
    polygons = 0
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "v":
                if len(tokens) < 4:
                    raise MeshLoadError(f"Vertex record on line {line_number} has fewer than 3 coordinates")
                try:
                    vertices.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
                except ValueError:
                    raise MeshLoadError(f"Malformed vertex record on line {line_number}")
            elif tokens[0] == "f":
                corners = [_obj_index(t, len(vertices), line_number) for t in tokens[1:]]
                if len(corners) < 3:
                    raise MeshLoadError(f"Face record on line {line_number} has fewer than 3 corners")
                if len(corners) > 3:
                    polygons += 1
                for i in range(1, len(corners) - 1):
                    faces.append((corners[0], corners[i], corners[i + 1]))
    if polygons:
        warnings.warn(f"{polygons} polygonal faces were fan-triangulated while reading {path}")
    return np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def read_with_trimesh(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Reads STL (binary or ASCII) and PLY files through `trimesh`, without any processing besides vertex merging for
    STL, which stores every triangle with its own corners."""
    try:
        loaded = trimesh.load(str(path), process=False, force="mesh")
    except Exception as e:
        raise MeshLoadError(f"Could not read mesh file {path}: {e}") from e
    if not isinstance(loaded, trimesh.Trimesh):
        raise MeshLoadError(f"File {path} does not contain a triangle mesh")
    if pathlib.Path(path).suffix.lower() == ".stl":
        loaded.merge_vertices()
    return np.asarray(loaded.vertices, dtype=np.float64), np.asarray(loaded.faces, dtype=np.int64)


def read_mesh_arrays(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    path = pathlib.Path(path)
    if not path.is_file():
        raise MeshLoadError(f"Mesh file {path} does not exist")
    suffix = path.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise MeshLoadError(f"Unsupported mesh format '{suffix}', expected one of {', '.join(SUPPORTED_SUFFIXES)}")
    if suffix == ".obj":
        return read_obj(path)
    return read_with_trimesh(path)


def write_obj(path: PathLike, vertices: np.ndarray, faces: np.ndarray):
    """Writes positions and triangles only, no normals, colors or texture coordinates."""
    if len(faces) == 0:
        pathlib.Path(path).write_text("".join(f"v {x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in vertices))
        return
    mesh = trimesh.Trimesh(vertices=vertices, faces=faces, process=False)
    text = trimesh.exchange.obj.export_obj(mesh, include_normals=False, include_color=False, include_texture=False)
    pathlib.Path(path).write_text(text)
