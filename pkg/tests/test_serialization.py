import struct

import numpy as np
import pytest

from thinshell import ImplicitThinShell
from thinshell.exceptions import InvalidItsFile, MissingShellError
from thinshell.field import ImplicitField
from thinshell.serialization import HEADER, load_its, save_its
from tests.conftest import make_cube


@pytest.fixture
def its_file(tmp_path, sphere_shell):
    path = tmp_path / "sphere.its"
    sphere_shell.save(path)
    return path


def test_round_trip(tmp_path, its_file, sphere_shell):
    field = sphere_shell.field
    loaded = load_its(its_file)
    assert loaded.height == field.height
    assert loaded.mode == field.mode
    assert loaded.transform == field.transform
    assert loaded.shell.eps1 == field.shell.eps1
    assert loaded.shell.eps2 == field.shell.eps2
    assert np.array_equal(loaded.lambdas, field.lambdas)
    for depth in range(field.height + 1):
        assert np.array_equal(loaded.svo.grid_points[depth], field.svo.grid_points[depth])
    points = np.random.default_rng(0).random((1000, 3))
    assert np.array_equal(loaded.evaluate_many(points), field.evaluate_many(points))

    copy = tmp_path / "copy.its"
    save_its(loaded, copy)
    assert copy.read_bytes() == its_file.read_bytes()


def test_file_size(its_file, sphere_shell):
    svo = sphere_shell.field.svo
    expected = HEADER.size + 8 * (svo.height + 1) + 16 * svo.total_grid_points
    assert its_file.stat().st_size == expected


def test_load_with_mesh(its_file, sphere_shell):
    shell = ImplicitThinShell.load(its_file, sphere_shell.mesh)
    assert shell.eps1 == sphere_shell.eps1
    assert shell.is_inside([0.0, 0.0, 0.0]) is True
    assert shell.report is None


def test_bad_magic(its_file):
    data = bytearray(its_file.read_bytes())
    data[:4] = b"NOPE"
    its_file.write_bytes(bytes(data))
    with pytest.raises(InvalidItsFile, match="magic"):
        load_its(its_file)


def test_unsupported_version(its_file):
    data = bytearray(its_file.read_bytes())
    data[4:8] = struct.pack("<I", 2)
    its_file.write_bytes(bytes(data))
    with pytest.raises(InvalidItsFile, match="version 2"):
        load_its(its_file)


@pytest.mark.parametrize("keep", [0, 10, HEADER.size + 4, -5])
def test_truncated_file(its_file, keep):
    data = its_file.read_bytes()
    its_file.write_bytes(data[:keep])
    with pytest.raises(InvalidItsFile, match="truncated"):
        load_its(its_file)


def test_trailing_bytes(its_file):
    its_file.write_bytes(its_file.read_bytes() + b"\x00")
    with pytest.raises(InvalidItsFile, match="trailing"):
        load_its(its_file)


def test_missing_shell(tmp_path, sphere_shell):
    field = sphere_shell.field
    bare = ImplicitField(field.svo, field.lambdas, field.transform, field.mode)
    path = tmp_path / "bare.its"
    with pytest.raises(MissingShellError):
        save_its(bare, path, require_shell=True)
    save_its(bare, path)
    assert load_its(path).shell is None


def test_rebuild_is_byte_identical(tmp_path):
    first, second = tmp_path / "first.its", tmp_path / "second.its"
    ImplicitThinShell.build(make_cube(), k=3, threads=1).save(first)
    ImplicitThinShell.build(make_cube(), k=3, threads=4).save(second)
    assert first.read_bytes() == second.read_bytes()
