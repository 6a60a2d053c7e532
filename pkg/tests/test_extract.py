import numpy as np
import pytest

from thinshell.exceptions import InvalidParameterError, MissingShellError
from thinshell.extract import marching_cubes, resolve_level, sample_grid
from thinshell.field import ImplicitField


def sphere(points: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points - 0.5, axis=1) - 0.3


def test_sample_grid_orientation():
    values = sample_grid(lambda p: p[:, 0] + 10 * p[:, 1] + 100 * p[:, 2], 17, threads=2)
    assert values.shape == (17, 17, 17)
    assert values[16, 0, 0] == pytest.approx(1.0)
    assert values[0, 16, 0] == pytest.approx(10.0)
    assert values[0, 0, 16] == pytest.approx(100.0)


def test_sample_grid_is_thread_independent():
    assert np.array_equal(sample_grid(sphere, 20, threads=1), sample_grid(sphere, 20, threads=3))


def test_analytic_sphere():
    extracted = marching_cubes(sphere, 0.0, resolution=64)
    assert not extracted.is_empty
    assert extracted.level == 0.0
    radii = np.linalg.norm(extracted.mesh.vertices - 0.5, axis=1)
    assert np.all(np.abs(radii - 0.3) <= 2.0 / 64)


def test_offset_level():
    extracted = marching_cubes(sphere, 0.1, resolution=64)
    radii = np.linalg.norm(extracted.mesh.vertices - 0.5, axis=1)
    assert np.all(np.abs(radii - 0.4) <= 2.0 / 64)


def test_empty_level_warns():
    with pytest.warns(UserWarning, match="is empty"):
        extracted = marching_cubes(sphere, 5.0, resolution=16)
    assert extracted.is_empty
    assert extracted.mesh.vertices.shape == (0, 3)


@pytest.mark.parametrize("resolution", [8, 15, 513])
def test_resolution_range(resolution):
    with pytest.raises(InvalidParameterError):
        marching_cubes(sphere, 0.0, resolution=resolution)


def test_resolve_level(sphere_shell):
    field = sphere_shell.field
    assert resolve_level(field, "eps1") == sphere_shell.eps1
    assert resolve_level(field, "eps2") == sphere_shell.eps2
    assert resolve_level(field, "zero") == 0.0
    assert resolve_level(field, "0.25") == 0.25
    assert resolve_level(field, -1) == -1.0
    with pytest.raises(InvalidParameterError):
        resolve_level(field, "middle")
    bare = ImplicitField(field.svo, field.lambdas, field.transform)
    with pytest.raises(MissingShellError):
        resolve_level(bare, "eps1")
    assert resolve_level(bare, "zero") == 0.0


def test_extract_field_levels(sphere_shell):
    zero = sphere_shell.extract("zero", resolution=48)
    outer = sphere_shell.extract("eps2", resolution=48)
    assert not zero.is_empty and not outer.is_empty
    assert outer.level == sphere_shell.eps2
    # the extraction happens in unit coordinates around the normalized sphere
    center = np.full(3, 0.5)
    assert np.linalg.norm(zero.mesh.vertices - center, axis=1).max() < 0.5
    assert np.linalg.norm(outer.mesh.vertices - center, axis=1).mean() >= (
        np.linalg.norm(zero.mesh.vertices - center, axis=1).mean()
    )
