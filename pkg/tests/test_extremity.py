import csv

import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from thinshell import ImplicitThinShell
from thinshell.exceptions import MissingShellError, SpaceMismatchError
from thinshell.extremity import (
    boundary_critical_points,
    collect_candidates,
    interior_critical_points,
    solve_interior,
    split_triangle,
    to_candidate_points,
    trilinear_polynomial,
    validate_containment,
    write_candidates_csv,
)
from thinshell.field import ImplicitField
from thinshell.mesh import sample_surface
from thinshell.models import CandidateKind, DistanceMode, ShellInterval
from thinshell.svo import build_svo, decode_lattice
from thinshell.utils.geometry import triangle_areas
from tests.conftest import make_icosphere, make_soup, make_torus

CORNER_TRIANGLE = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def simplex_grid(n: int = 80):
    ticks = np.linspace(0.0, 1.0, n + 1)
    alpha, beta = np.meshgrid(ticks, ticks, indexing="ij")
    inside = alpha + beta <= 1.0
    return alpha[inside], beta[inside]


def test_trilinear_polynomial_of_product():
    h = trilinear_polynomial([0, 0, 0, 0, 0, 0, 0, 1], CORNER_TRIANGLE)
    # x y z = alpha beta (1 - alpha - beta)
    expected = np.zeros((4, 4))
    expected[1, 1], expected[2, 1], expected[1, 2] = 1.0, -1.0, -1.0
    assert np.allclose(h, expected)


def test_trilinear_polynomial_matches_direct_evaluation():
    rng = np.random.default_rng(0)
    t = rng.normal(size=8)
    triangle = rng.random((3, 3))
    h = trilinear_polynomial(t, triangle)
    alpha, beta = simplex_grid(10)
    points = alpha[:, None] * triangle[0] + beta[:, None] * triangle[1] + (1 - alpha - beta)[:, None] * triangle[2]
    x, y, z = points.T
    direct = t[0] + t[1] * x + t[2] * y + t[3] * z + t[4] * x * y + t[5] * y * z + t[6] * x * z + t[7] * x * y * z
    assert np.allclose(P.polyval2d(alpha, beta, h), direct)


def test_product_critical_point():
    points = interior_critical_points([0, 0, 0, 0, 0, 0, 0, 1], CORNER_TRIANGLE)
    assert any(abs(a - 1 / 3) < 1e-9 and abs(b - 1 / 3) < 1e-9 for a, b in points)
    assert all(a >= 0 and b >= 0 and a + b <= 1.0 + 1e-12 for a, b in points)


def test_affine_gradient():
    # (alpha - 1/3)(beta - 1/3)
    h = np.zeros((4, 4))
    h[1, 1], h[1, 0], h[0, 1], h[0, 0] = 1.0, -1 / 3, -1 / 3, 1 / 9
    points, used_grid = solve_interior(h)
    assert not used_grid
    assert len(points) == 1
    assert points[0] == pytest.approx((1 / 3, 1 / 3), abs=1e-12)


def test_constant_and_linear_have_no_interior_points():
    assert solve_interior(np.zeros((4, 4))) == ([], False)
    h = np.zeros((4, 4))
    h[1, 0], h[0, 1] = 2.0, -1.0
    assert solve_interior(h) == ([], False)


def test_swapped_elimination():
    # alpha beta^2 - alpha / 4 - 0.3 beta^2 has no alpha^2 term in either gradient component
    h = np.zeros((4, 4))
    h[1, 2], h[1, 0], h[0, 2] = 1.0, -0.25, -0.3
    points, used_grid = solve_interior(h)
    assert not used_grid
    assert len(points) == 1
    assert points[0] == pytest.approx((0.3, 0.5), abs=1e-9)


def gradient_norm(h, alpha, beta):
    ga = P.polyval2d(alpha, beta, P.polyder(h, axis=0))
    gb = P.polyval2d(alpha, beta, P.polyder(h, axis=1))
    return np.hypot(ga, gb)


def test_newton_grid_collapses_converged_starts():
    # (alpha - 0.3)^2 (beta - 0.4): both gradient components share a factor, so both eliminations vanish
    h = np.zeros((4, 4))
    h[2, 1], h[2, 0], h[1, 1], h[1, 0], h[0, 1], h[0, 0] = 1.0, -0.4, -0.6, 0.24, 0.09, -0.036
    points, used_grid = solve_interior(h)
    assert used_grid
    assert len(points) == 1
    assert points[0] == pytest.approx((0.3, 0.4), abs=1e-6)
    assert gradient_norm(h, *points[0]) <= 1e-7


def test_critical_line_keeps_one_point():
    # (alpha + beta - 0.5)^3 is critical along a whole line
    h = np.zeros((4, 4))
    for (i, j), c in {(3, 0): 1, (2, 1): 3, (1, 2): 3, (0, 3): 1, (2, 0): -1.5, (1, 1): -3, (0, 2): -1.5}.items():
        h[i, j] = c
    h[1, 0], h[0, 1], h[0, 0] = 0.75, 0.75, -0.125
    points, used_grid = solve_interior(h)
    assert used_grid
    assert len(points) == 1
    assert sum(points[0]) == pytest.approx(0.5, abs=1e-9)


def test_interior_points_are_critical():
    rng = np.random.default_rng(7)
    for _ in range(200):
        h = trilinear_polynomial(rng.normal(size=8), rng.random((3, 3)))
        points, _ = solve_interior(h)
        for alpha, beta in points:
            assert gradient_norm(h, alpha, beta) <= 1e-7 * max(1.0, np.abs(h).sum())


def test_edge_critical_points():
    # x y = alpha beta vanishes on two edges and peaks halfway along the third
    points = boundary_critical_points([0, 0, 0, 0, 1, 0, 0, 0], CORNER_TRIANGLE)
    assert len(points) == 1
    assert points[0] == pytest.approx((0.5, 0.5), abs=1e-12)


def test_candidates_bound_dense_samples():
    rng = np.random.default_rng(1)
    alpha, beta = simplex_grid()
    for _ in range(200):
        t = rng.normal(size=8)
        triangle = rng.random((3, 3))
        h = trilinear_polynomial(t, triangle)
        interior, _ = solve_interior(h)
        candidates = [(1.0, 0.0), (0.0, 1.0), (0.0, 0.0)] + interior + boundary_critical_points(t, triangle)
        a, b = np.array(candidates).T
        values = P.polyval2d(a, b, h)
        dense = P.polyval2d(alpha, beta, h)
        scale = np.abs(h).sum()
        assert dense.min() >= values.min() - 1e-9 * scale
        assert dense.max() <= values.max() + 1e-9 * scale


def test_split_triangle_preserves_area():
    svo = build_svo(np.arange(64, dtype=np.uint64), 2)
    triangle = np.array([[0.05, 0.1, 0.2], [0.9, 0.3, 0.6], [0.4, 0.95, 0.8]])
    pieces = split_triangle(triangle, svo)
    assert len(pieces) > 1
    areas = triangle_areas(*(np.array([p.corners[i] for p in pieces]) for i in range(3)))
    assert areas.sum() == pytest.approx(triangle_areas(*(triangle[i : i + 1] for i in range(3)))[0])
    width = svo.cell_width(0)
    for piece in pieces:
        low = decode_lattice(np.array([piece.cell], dtype=np.uint64))[0] * width
        assert np.all(piece.corners >= low - 1e-12)
        assert np.all(piece.corners <= low + width + 1e-12)


def test_split_triangle_inside_one_cell():
    svo = build_svo(np.array([0], dtype=np.uint64), 2)
    triangle = np.array([[0.01, 0.01, 0.01], [0.2, 0.02, 0.03], [0.1, 0.2, 0.1]])
    pieces = split_triangle(triangle, svo)
    assert len(pieces) == 1
    assert pieces[0].cell == 0
    assert np.array_equal(pieces[0].corners, triangle)


def test_sphere_containment(sphere_shell):
    shell = sphere_shell.shell
    assert shell.eps1 <= shell.eps2
    assert shell.thickness >= 0
    assert shell.candidates.vertex > 0
    unit = sphere_shell.mesh.transformed(sphere_shell.transform)
    values = sphere_shell.field.evaluate_many(sample_surface(unit, 20000, seed=2).positions)
    assert values.min() >= shell.eps1
    assert values.max() <= shell.eps2
    assert validate_containment(sphere_shell.field, unit, 5000, seed=3).ratio == 1.0


def test_cube_containment(cube_shell):
    assert cube_shell.validate(samples=5000, seed=4).ratio == 1.0


def test_torus_containment():
    shell = ImplicitThinShell.build(make_torus(), k=4)
    report = shell.validate(samples=5000, seed=5)
    assert report.ratio == 1.0
    assert report.lower == shell.eps1 and report.upper == shell.eps2


def test_unsigned_soup_containment():
    shell = ImplicitThinShell.build(make_soup(), k=4, mode="unsigned")
    assert shell.field.mode == DistanceMode.UNSIGNED
    report = shell.validate(samples=5000, seed=6)
    assert report.ratio == 1.0
    assert report.lower == 0.0
    assert report.upper == shell.shell.unsigned_bound


def test_candidate_table(cube_shell, tmp_path):
    unit = cube_shell.mesh.transformed(cube_shell.transform)
    table = collect_candidates(cube_shell.field, unit, threads=2)
    assert table["value"].min() == cube_shell.eps1
    assert table["value"].max() == cube_shell.eps2
    assert set(np.unique(table["face_id"]).tolist()) == set(range(12))
    assert np.array_equal(collect_candidates(cube_shell.field, unit, threads=1), table)
    points = to_candidate_points(table[:5])
    assert points[0].kind == CandidateKind.VERTEX
    assert points[0].barycentric == (1.0, 0.0)
    path = tmp_path / "candidates.csv"
    write_candidates_csv(path, table)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["faceId", "kind", "alpha", "beta", "x", "y", "z", "f"]
    assert len(rows) == len(table) + 1
    assert float(rows[1][7]) == table["value"][0]


def test_model_space_mesh_is_rejected(cube_shell):
    with pytest.raises(SpaceMismatchError):
        collect_candidates(cube_shell.field, cube_shell.mesh)
    with pytest.raises(SpaceMismatchError):
        validate_containment(cube_shell.field, cube_shell.mesh)


def test_validation_needs_shell(cube_shell):
    field = ImplicitField(cube_shell.field.svo, cube_shell.field.lambdas, cube_shell.transform)
    with pytest.raises(MissingShellError):
        validate_containment(field, cube_shell.mesh.transformed(cube_shell.transform))


def dense_face_values(shell: ImplicitThinShell, n: int = 24) -> np.ndarray:
    unit = shell.mesh.transformed(shell.transform)
    alpha, beta = simplex_grid(n)
    weights = np.stack([alpha, beta, 1.0 - alpha - beta], axis=1)
    corners = unit.vertices[unit.faces]
    points = np.einsum("sk,fkd->fsd", weights, corners).reshape(-1, 3)
    return shell.field.evaluate_many(points)


def test_shell_encloses_dense_surface_values(sphere_shell, cube_shell):
    for shell in (sphere_shell, cube_shell):
        values = dense_face_values(shell)
        assert shell.eps1 <= values.min()
        assert shell.eps2 >= values.max()


def test_thickness_shrinks_with_depth(sphere_shell):
    finer = ImplicitThinShell.build(make_icosphere(1), k=5)
    assert finer.thickness < sphere_shell.thickness
    values = dense_face_values(finer)
    assert finer.eps1 <= values.min()
    assert finer.eps2 >= values.max()


def test_unsigned_containment_rejects_negative_values(sphere_shell):
    unit = sphere_shell.mesh.transformed(sphere_shell.transform)
    positions = sample_surface(unit, 2000, seed=8).positions
    sign = 1.0 if np.any(sphere_shell.field.evaluate_many(positions) < 0.0) else -1.0
    shell = sphere_shell.shell
    low, high = sorted((sign * shell.eps1, sign * shell.eps2))
    field = ImplicitField(
        sphere_shell.field.svo,
        sign * sphere_shell.field.lambdas,
        sphere_shell.transform,
        mode=DistanceMode.UNSIGNED,
        shell=ShellInterval(eps1=low, eps2=high),
    )
    values = field.evaluate_many(positions)
    assert np.any(values < 0.0)
    report = validate_containment(field, unit, 2000, seed=8)
    assert report.lower == 0.0
    assert report.inside == int(np.sum((values >= 0.0) & (values <= shell.unsigned_bound)))
    assert report.ratio < 1.0
