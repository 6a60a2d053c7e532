import json

import numpy as np
import pytest

from thinshell.exceptions import InvalidParameterError, MissingShellError, SpaceMismatchError
from thinshell.extremity import compute_shell_interval
from thinshell.field import ImplicitField, build_field
from thinshell.mesh import TriangleMesh
from thinshell.models import DistanceMode, ShellInterval, SimplifyMode
from thinshell.simplify import (
    audit_violations,
    compute_quadrics,
    optimal_contraction,
    plane_quadrics,
    quadric_error,
    simplify,
    write_report,
)
from tests.conftest import make_icosphere, make_planar_grid


def plane(normal, offset) -> np.ndarray:
    p = np.append(np.asarray(normal, dtype=np.float64), offset)
    return np.outer(p, p)


@pytest.fixture(scope="module")
def planar_field() -> ImplicitField:
    grid = make_planar_grid()
    field, _ = build_field(grid, 3, DistanceMode.UNSIGNED)
    compute_shell_interval(field, grid)
    return field


def test_plane_quadrics(planar_grid):
    quadrics = plane_quadrics(planar_grid)
    assert quadrics.shape == (128, 4, 4)
    assert np.allclose(quadrics[:, 2, 2], 1.0)
    errors = quadric_error(quadrics, np.tile([0.3, 0.7, 0.25], (128, 1)))
    assert np.allclose(errors, 0.0625)


def test_optimal_contraction_solves_corner():
    q = plane([1, 0, 0], -1.0) + plane([0, 1, 0], -2.0) + plane([0, 0, 1], -3.0)
    target = optimal_contraction(q, np.zeros(3), np.ones(3))
    assert np.allclose(target, [1.0, 2.0, 3.0])


def test_optimal_contraction_fallback():
    # a single plane is singular: the best of both endpoints and the midpoint is used
    q = plane([0, 0, 1], 0.0)
    assert optimal_contraction(q, np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 3.0])).tolist() == [0.0, 0.0, 1.0]
    assert optimal_contraction(q, np.array([0.0, 0.0, 3.0]), np.array([0.0, 0.0, 1.0])).tolist() == [0.0, 0.0, 1.0]
    assert optimal_contraction(np.zeros((4, 4)), np.zeros(3), np.array([2.0, 0.0, 0.0])).tolist() == [1.0, 0.0, 0.0]


def test_boundary_quadrics(planar_grid):
    quadrics = compute_quadrics(planar_grid)
    interior = 4 * 9 + 4
    corner = 0
    assert quadric_error(quadrics[interior], [0.55, 0.45, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert quadric_error(quadrics[corner], [-0.1, 0.0, 0.0]) > 0
    plain = compute_quadrics(planar_grid, boundary_weight=0.0)
    assert quadric_error(plain[corner], [-0.1, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)


def test_parameter_checks(planar_grid, planar_field):
    with pytest.raises(InvalidParameterError):
        simplify(planar_grid, planar_field, target_faces=3)
    with pytest.raises(InvalidParameterError):
        simplify(planar_grid, planar_field, "global", gamma=-1.0)
    with pytest.raises(MissingShellError):
        simplify(planar_grid, None, "constrained")
    with pytest.raises(ValueError):
        simplify(planar_grid, planar_field, "sideways")
    far = TriangleMesh(planar_grid.vertices * 10.0, planar_grid.faces)
    with pytest.raises(SpaceMismatchError):
        simplify(far, planar_field, "global")


def test_constrained_collapses_stay_in_shell(sphere_shell):
    field = sphere_shell.field
    wide = ImplicitField(field.svo, field.lambdas, field.transform, field.mode, ShellInterval(eps1=-1.0, eps2=1.0))
    result = simplify(sphere_shell.mesh, wide, SimplifyMode.CONSTRAINED, target_faces=40)
    assert not result.report.exhausted
    assert result.report.accepted_collapses == len(result.audit) > 0
    assert result.report.final_faces <= 40
    assert len(result.mesh.faces) == result.report.final_faces
    assert audit_violations(result, wide) == []
    assert result.report.max_abs_f < 1.0


def test_tiny_shell_blocks_collapses(sphere_shell):
    field = sphere_shell.field
    tiny = ImplicitField(field.svo, field.lambdas, field.transform, field.mode, ShellInterval(eps1=-1e-9, eps2=1e-9))
    with pytest.warns(UserWarning, match="No admissible collapse"):
        result = simplify(sphere_shell.mesh, tiny, "constrained", target_faces=40)
    assert result.report.exhausted
    assert result.report.rejected_collapses > 0
    assert result.report.final_faces > 40
    assert audit_violations(result, tiny) == []


def test_plain_quadric_simplification_keeps_outline(planar_grid):
    result = simplify(planar_grid, None, "global", target_faces=30)
    assert result.report.final_faces <= 30
    # corners carry two boundary planes and boundary vertices only slide along the outline
    low, high = result.mesh.bounds
    assert np.allclose(low, 0.0) and np.allclose(high, [1.0, 1.0, 0.0])


def test_zero_gamma_matches_plain_quadric_simplification(planar_grid, planar_field):
    plain = simplify(planar_grid, None, "global", target_faces=30)
    guided = simplify(planar_grid, planar_field, "global", target_faces=30, gamma=0.0)
    assert np.array_equal(plain.mesh.vertices, guided.mesh.vertices)
    assert np.array_equal(plain.mesh.faces, guided.mesh.faces)
    assert plain.report.rejected_collapses == 0


def test_global_mode_on_sphere(sphere_shell):
    result = sphere_shell.simplify(40, mode="global", gamma=1.0)
    assert result.report.mode == SimplifyMode.GLOBAL_TERM
    assert not result.report.exhausted
    assert result.report.final_faces <= 40
    assert result.mesh.is_watertight
    # the output stays in model coordinates
    assert np.all(np.abs(result.mesh.vertices) < 1.5)


def test_constrained_mode_on_sphere(sphere_shell):
    result = sphere_shell.simplify(60)
    assert audit_violations(result, sphere_shell.field) == []
    assert result.mesh.is_watertight
    assert result.report.initial_faces == 80


def test_plain_quadric_simplification_keeps_closed_meshes_closed():
    result = simplify(make_icosphere(2), None, "global", target_faces=40)
    assert result.report.final_faces <= 40
    assert result.mesh.is_watertight
    assert np.all(np.abs(np.linalg.norm(result.mesh.vertices, axis=1) - 1.0) < 0.5)


def test_non_manifold_edges_are_locked():
    grid = make_planar_grid(4)
    # a fin on the interior edge between vertices 6 and 12
    vertices = np.vstack([grid.vertices, [[0.4, 0.4, 0.5]]])
    faces = np.vstack([grid.faces, [[6, 12, len(grid.vertices)]]])
    mesh = TriangleMesh(vertices, faces)
    with pytest.warns(UserWarning, match="non-manifold"):
        result = simplify(mesh, None, "global", target_faces=10)
    kept = {tuple(v) for v in np.round(result.mesh.vertices, 12).tolist()}
    assert tuple(grid.vertices[6]) in kept and tuple(grid.vertices[12]) in kept


def test_write_report(tmp_path, sphere_shell):
    result = simplify(sphere_shell.mesh, sphere_shell.field, "global", target_faces=60)
    path = tmp_path / "report.json"
    write_report(path, result)
    data = json.loads(path.read_text())
    assert data["mode"] == "global"
    assert data["final_faces"] == result.report.final_faces
    assert len(data["collapses"]) == result.report.accepted_collapses
    assert set(data["collapses"][0]) == {"keep", "remove", "target", "f_value", "priority"}
    write_report(path, result, include_audit=False)
    assert "collapses" not in json.loads(path.read_text())
