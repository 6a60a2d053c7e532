import numpy as np
import pytest
import scipy.sparse

from thinshell.exceptions import CellNotFoundError, InvalidParameterError
from thinshell.field import (
    ImplicitField,
    SparseSystem,
    assemble_system,
    basis_1d,
    basis_3d,
    build_field,
    cell_trilinear_coeffs,
    evaluate,
    evaluate_many,
    grid_point_positions,
    slice_values,
    solve_coefficients,
)
from thinshell.mesh import normalize_to_unit
from thinshell.models import DistanceMode
from thinshell.svo import CellKey, build_svo, decode_lattice, voxelize
from tests.conftest import make_icosphere


def random_field(height: int, leaves, seed: int = 0) -> ImplicitField:
    svo = build_svo(np.array(leaves, dtype=np.uint64), height)
    lambdas = np.random.default_rng(seed).normal(size=svo.total_grid_points)
    return ImplicitField(svo, lambdas)


def exhaustive_sum(field: ImplicitField, points: np.ndarray) -> np.ndarray:
    total = np.zeros(len(points))
    for depth in range(field.height + 1):
        positions = field.svo.grid_point_positions(depth)
        weights = basis_3d(points[:, None, :], positions[None, :, :], field.svo.cell_width(depth))
        total += weights @ field.depth_lambdas(depth)
    return total


def test_basis_values():
    assert basis_1d(0.0) == 1.0
    assert basis_1d(0.5) == 0.5
    assert basis_1d(-0.5) == 0.5
    assert basis_1d(1.0) == 0.0
    assert basis_1d(-2.0) == 0.0
    assert basis_3d(np.array([0.5, 0.5, 0.5]), np.zeros(3), 1.0) == pytest.approx(0.125)
    assert basis_3d(np.array([0.1, 0.2, 0.3]), np.array([0.1, 0.2, 0.3]), 0.25) == 1.0
    with pytest.raises(InvalidParameterError):
        basis_3d(np.zeros(3), np.zeros(3), 0.0)


def test_partition_of_unity():
    svo = build_svo(np.arange(64, dtype=np.uint64), 2)
    lambdas = np.zeros(svo.total_grid_points)
    lambdas[: svo.grid_point_counts[0]] = 1.0
    field = ImplicitField(svo, lambdas)
    points = np.random.default_rng(1).random((500, 3))
    assert np.allclose(field.evaluate_many(points), 1.0)
    assert evaluate(field, [1.0, 1.0, 1.0]) == pytest.approx(1.0)
    assert evaluate(field, [0.0, 0.5, 1.0]) == pytest.approx(1.0)


@pytest.mark.parametrize("leaves", [[0], [5, 40, 63], [0, 7, 56, 63, 300, 511]])
def test_evaluation_matches_exhaustive_sum(leaves):
    height = 3
    field = random_field(height, leaves, seed=len(leaves))
    rng = np.random.default_rng(2)
    points = np.vstack([rng.random((300, 3)), field.svo.grid_point_positions(0)[:20], [[1.0, 1.0, 1.0]]])
    assert np.allclose(evaluate_many(field, points), exhaustive_sum(field, points), atol=1e-12)


def test_field_is_zero_outside_root():
    field = random_field(2, [0, 63])
    values = field.evaluate_many(np.array([[-0.1, 0.5, 0.5], [0.5, 1.2, 0.5], [2.0, 2.0, 2.0]]))
    assert np.array_equal(values, np.zeros(3))


def test_wrong_number_of_coefficients():
    svo = build_svo(np.array([0], dtype=np.uint64), 2)
    with pytest.raises(InvalidParameterError):
        ImplicitField(svo, np.zeros(10))


def test_trilinear_coefficients_are_exact():
    field = random_field(3, [0, 9, 100, 511])
    rng = np.random.default_rng(3)
    width = field.svo.cell_width(0)
    for code in field.svo.cells[0][::5]:
        t = cell_trilinear_coeffs(field, CellKey(0, int(code)))
        local = rng.random((20, 3))
        x, y, z = local.T
        expected = t[0] + t[1] * x + t[2] * y + t[3] * z + t[4] * x * y + t[5] * y * z + t[6] * x * z + t[7] * x * y * z
        origin = decode_lattice(np.array([code], dtype=np.uint64))[0] * width
        assert np.allclose(field.evaluate_many(origin + local * width), expected, atol=1e-12)


def test_trilinear_coefficients_errors():
    field = random_field(3, [0])
    with pytest.raises(CellNotFoundError):
        cell_trilinear_coeffs(field, CellKey(1, 0))
    with pytest.raises(CellNotFoundError):
        cell_trilinear_coeffs(field, 511)


@pytest.fixture(scope="module")
def sphere_system():
    unit, _ = normalize_to_unit(make_icosphere(1))
    svo = build_svo(voxelize(unit, 3), 3)
    return svo, assemble_system(svo, unit, DistanceMode.SIGNED)


def test_system_rows_sample_the_field(sphere_system):
    svo, system = sphere_system
    count = svo.total_grid_points
    assert system.matrix.shape == (count, count)
    lambdas = np.random.default_rng(4).normal(size=count)
    field = ImplicitField(svo, lambdas)
    assert np.allclose(system.matrix @ lambdas, field.evaluate_many(grid_point_positions(svo)), atol=1e-12)


def test_same_depth_blocks_are_identity(sphere_system):
    svo, system = sphere_system
    for depth in range(svo.height + 1):
        block = system.matrix[svo.grid_offsets[depth] : svo.grid_offsets[depth + 1]][
            :, svo.grid_offsets[depth] : svo.grid_offsets[depth + 1]
        ]
        assert np.array_equal(block.toarray(), np.eye(block.shape[0]))


def test_right_hand_side_is_signed_distance(sphere_system):
    svo, system = sphere_system
    positions = grid_point_positions(svo)
    center = np.linalg.norm(positions - 0.5, axis=1) < 0.1
    far = np.linalg.norm(positions - 0.5, axis=1) > 0.6
    assert np.all(system.rhs[center] < 0)
    assert np.all(system.rhs[far] > 0)


def test_solve_matches_least_squares():
    rng = np.random.default_rng(5)
    dense = np.eye(30) + 0.1 * rng.normal(size=(30, 30))
    b = rng.normal(size=30)
    x, result = solve_coefficients(SparseSystem(scipy.sparse.csr_matrix(dense), b), tol=1e-12)
    assert result.converged
    assert np.allclose(x, np.linalg.solve(dense, b), atol=1e-8)
    assert result.residual < 1e-8


def test_solve_warns_on_iteration_cap():
    rng = np.random.default_rng(6)
    dense = np.eye(20) + 0.3 * rng.normal(size=(20, 20))
    system = SparseSystem(scipy.sparse.csr_matrix(dense), rng.normal(size=20))
    with pytest.warns(UserWarning, match="stopped after 1 iterations"):
        _, result = solve_coefficients(system, max_iter=1)
    assert not result.converged
    assert result.iterations == 1
    with pytest.raises(InvalidParameterError):
        solve_coefficients(system, tol=0.0)
    with pytest.raises(InvalidParameterError):
        solve_coefficients(system, max_iter=0)


def test_solve_zero_rhs():
    system = SparseSystem(scipy.sparse.identity(5, format="csr"), np.zeros(5))
    x, result = solve_coefficients(system)
    assert result.converged
    assert np.array_equal(x, np.zeros(5))


def test_build_field_report(cube):
    unit, transform = normalize_to_unit(cube)
    field, report = build_field(unit, 3, DistanceMode.SIGNED, transform=transform)
    assert report.k == 3
    assert report.faces == 12
    assert report.cells_per_depth[-1] == 1
    assert report.grid_points_per_depth == field.svo.grid_point_counts
    assert set(report.stage_seconds) == {"voxelize", "octree", "assemble", "solve"}
    assert report.solve.converged
    assert report.solve.residual <= 1e-7
    assert field.shell is None
    assert field.evaluate_model(np.zeros((1, 3)))[0] < 0
    assert field.evaluate_model(np.array([[0.0, 0.0, 0.55]]))[0] > 0


def test_build_field_is_thread_independent(cube):
    unit, transform = normalize_to_unit(cube)
    single, _ = build_field(unit, 3, threads=1)
    many, _ = build_field(unit, 3, threads=4)
    assert np.array_equal(single.lambdas, many.lambdas)


def test_slice_values(sphere_shell):
    values = slice_values(sphere_shell.field, "z", 0.5, 33)
    assert values.shape == (33, 33)
    assert values.min() < 0 < values.max()
    # the first index runs along x for a z slice
    assert values[16, 16] == pytest.approx(sphere_shell.field.evaluate([0.5, 0.5, 0.5]))
    assert values[0, 16] == pytest.approx(sphere_shell.field.evaluate([0.0, 0.5, 0.5]))
    with pytest.raises(InvalidParameterError):
        slice_values(sphere_shell.field, "w")
    with pytest.raises(InvalidParameterError):
        slice_values(sphere_shell.field, "x", 1.5)
    with pytest.raises(InvalidParameterError):
        slice_values(sphere_shell.field, "y", 0.5, 1)
