from __future__ import annotations

import numpy as np
import pytest
import trimesh

from thinshell import ImplicitThinShell
from thinshell.mesh import TriangleMesh


def as_mesh(loaded: trimesh.Trimesh) -> TriangleMesh:
    return TriangleMesh(np.asarray(loaded.vertices), np.asarray(loaded.faces))


def make_cube() -> TriangleMesh:
    """Unit cube centered at the origin, 12 outward-facing triangles."""
    return as_mesh(trimesh.creation.box(extents=(1.0, 1.0, 1.0)))


def make_icosphere(subdivisions: int = 1) -> TriangleMesh:
    return as_mesh(trimesh.creation.icosphere(subdivisions=subdivisions, radius=1.0))


def make_torus() -> TriangleMesh:
    return as_mesh(trimesh.creation.torus(major_radius=1.0, minor_radius=0.4, major_sections=24, minor_sections=12))


def make_planar_grid(n: int = 8) -> TriangleMesh:
    """Square `[0, 1]^2` at `z = 0` split into `2 n^2` triangles."""
    ticks = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(ticks, ticks, indexing="ij")
    vertices = np.stack([x.reshape(-1), y.reshape(-1), np.zeros(x.size)], axis=1)
    faces = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = i * (n + 1) + j, (i + 1) * (n + 1) + j, (i + 1) * (n + 1) + j + 1, i * (n + 1) + j + 1
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(vertices, faces)


def make_soup(seed: int = 3) -> TriangleMesh:
    """Icosphere with random faces flipped and one face in five detached onto its own vertices."""
    sphere = make_icosphere(1)
    rng = np.random.default_rng(seed)
    faces = np.array(sphere.faces)
    flip = rng.random(len(faces)) < 0.5
    faces[flip] = faces[flip][:, ::-1]
    vertices = [np.array(sphere.vertices)]
    detached = np.flatnonzero(rng.random(len(faces)) < 0.2)
    for count, face_id in enumerate(detached):
        vertices.append(sphere.vertices[faces[face_id]])
        faces[face_id] = len(sphere.vertices) + 3 * count + np.arange(3)
    return TriangleMesh(np.vstack(vertices), faces)


@pytest.fixture
def cube() -> TriangleMesh:
    return make_cube()


@pytest.fixture
def icosphere() -> TriangleMesh:
    return make_icosphere(1)


@pytest.fixture
def planar_grid() -> TriangleMesh:
    return make_planar_grid()


@pytest.fixture
def soup() -> TriangleMesh:
    return make_soup()


@pytest.fixture(scope="session")
def sphere_shell() -> ImplicitThinShell:
    return ImplicitThinShell.build(make_icosphere(1), k=4)


@pytest.fixture(scope="session")
def cube_shell() -> ImplicitThinShell:
    return ImplicitThinShell.build(make_cube(), k=3)
