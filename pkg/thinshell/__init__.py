from __future__ import annotations

import pathlib
import time
import warnings
from typing import List, Optional, Sequence, Union

import numpy as np

from thinshell.exceptions import MissingShellError, ThinShellError
from thinshell.extract import LevelSetMesh, marching_cubes, resolve_level
from thinshell.extremity import compute_shell_interval, validate_containment
from thinshell.field import DEFAULT_TOLERANCE, ImplicitField, build_field
from thinshell.mesh import DEFAULT_MARGIN, TriangleMesh, UnitTransform, load_mesh, normalize_to_unit
from thinshell.models import (
    BuildReport,
    Classification,
    DistanceMode,
    FallbackPolicy,
    Label,
    ShellInterval,
    SimplifyMode,
    ValidationReport,
)
from thinshell.query import classify_batch
from thinshell.serialization import load_its, save_its
from thinshell.simplify import SimplifyResult, simplify
from thinshell.version import __version__  # noqa: F401

PathLike = Union[str, pathlib.Path]


class ImplicitThinShell:
    def __init__(
        self, field: ImplicitField, mesh: Optional[TriangleMesh] = None, report: Optional[BuildReport] = None
    ):
        """
        A surface enclosed by two level sets of a B-spline distance field, `eps1 <= f <= eps2`, which answers
        inside-outside queries without touching the mesh for points away from the surface.

        Usually created with `ImplicitThinShell.build` from a mesh or `ImplicitThinShell.load` from an ITS file:

        ```python
        shell = ImplicitThinShell.build("bunny.obj", k=6)
        shell.classify([[0.0, 0.1, 0.0]])
        shell.save("bunny.its")
        ```

        :param field: the solved field.
        :param mesh: the mesh in model coordinates, needed for the exact fallback, simplification and validation.
        :param report: the build report, when the field was built in this process.
        """
        self.field = field
        self.mesh = mesh
        self.report = report

    def __repr__(self):
        return f"ImplicitThinShell(K={self.field.height}, mode={self.field.mode.value}, shell={self.shell})"

    @classmethod
    def build(
        cls,
        mesh: Union[TriangleMesh, PathLike],
        k: int = 6,
        mode: Union[DistanceMode, str] = DistanceMode.SIGNED,
        tol: float = DEFAULT_TOLERANCE,
        max_iter: Optional[int] = None,
        margin: float = DEFAULT_MARGIN,
        threads: Optional[int] = None,
    ) -> ImplicitThinShell:
        """
        Runs the full pipeline: normalization to the unit cube, voxelization, octree, system assembly, least-squares
        solve and the extreme values of the field over the surface.

        :param mesh: a mesh in model coordinates or the path of an OBJ, STL or PLY file.
        :param k: octree height, the finest cells have width `2^-k`.
        :param mode: `signed` for closed meshes, `unsigned` for triangle soups and open meshes.
        :param tol: relative tolerance of the least-squares solver.
        :param max_iter: iteration cap of the solver, defaults to ten times the number of grid points.
        :param margin: empty space kept around the mesh inside the unit cube.
        :param threads: worker threads; results do not depend on it.
        """
        if not isinstance(mesh, TriangleMesh):
            mesh = load_mesh(mesh)
        mode = DistanceMode(mode)
        if mode == DistanceMode.SIGNED and not mesh.is_watertight:
            warnings.warn("Mesh is not watertight, signed distances may flip sign; the unsigned mode is safer")
        unit_mesh, transform = normalize_to_unit(mesh, margin)
        field, report = build_field(unit_mesh, k, mode, tol, max_iter, transform, threads)
        start = time.perf_counter()
        report.shell = compute_shell_interval(field, unit_mesh, threads)
        report.stage_seconds["extremity"] = time.perf_counter() - start
        return cls(field, mesh, report)

    @classmethod
    def load(cls, path: PathLike, mesh: Optional[Union[TriangleMesh, PathLike]] = None) -> ImplicitThinShell:
        """Loads an ITS file, optionally together with the model-space mesh it was built from."""
        if mesh is not None and not isinstance(mesh, TriangleMesh):
            mesh = load_mesh(mesh)
        return cls(load_its(path), mesh)

    def save(self, path: PathLike):
        save_its(self.field, path)

    @property
    def transform(self) -> UnitTransform:
        return self.field.transform

    @property
    def shell(self) -> Optional[ShellInterval]:
        return self.field.shell

    @property
    def eps1(self) -> float:
        return self._require_shell().eps1

    @property
    def eps2(self) -> float:
        return self._require_shell().eps2

    @property
    def thickness(self) -> float:
        return self._require_shell().thickness

    def _require_shell(self) -> ShellInterval:
        if self.field.shell is None:
            raise MissingShellError("The shell interval has not been computed for this field")
        return self.field.shell

    def _require_mesh(self) -> TriangleMesh:
        if self.mesh is None:
            raise ThinShellError("This operation needs the mesh, pass it when creating or loading the shell")
        return self.mesh

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Field values at model-space points of shape `(n, 3)`."""
        return self.field.evaluate_model(points)

    def classify(
        self, points: Sequence[Sequence[float]], policy: Union[FallbackPolicy, str] = FallbackPolicy.ON_SURFACE
    ) -> List[Classification]:
        """
        Classifies model-space points as inside, outside or on the surface.

        :param points: the query points.
        :param policy: `on_surface` reports points inside the shell as `OnSurface`, `exact` resolves them with the
            winding number of the mesh.
        """
        results, _ = classify_batch(self.field, np.asarray(points, dtype=np.float64), policy, self.mesh)
        return results

    def is_inside(self, point: Sequence[float]) -> Optional[bool]:
        """`True` or `False` for a decided point, `None` when it lies inside the shell and no mesh is attached."""
        policy = FallbackPolicy.EXACT if self.mesh is not None else FallbackPolicy.ON_SURFACE
        return self.classify([point], policy)[0].label.is_inside()

    def simplify(
        self,
        target_faces: int,
        mode: Union[SimplifyMode, str] = SimplifyMode.CONSTRAINED,
        gamma: float = 1.0,
        mesh: Optional[TriangleMesh] = None,
    ) -> SimplifyResult:
        """Simplifies the attached mesh, or `mesh` when given, guided by the field. See `thinshell.simplify`."""
        return simplify(mesh or self._require_mesh(), self.field, mode, target_faces, gamma)

    def extract(self, level: Union[str, float] = "zero", resolution: int = 128) -> LevelSetMesh:
        """Marching-cubes mesh of the level `eps1`, `zero`, `eps2` or a number, in unit coordinates."""
        return marching_cubes(self.field, resolve_level(self.field, level), resolution)

    def validate(self, samples: int = 10000, seed: int = 0) -> ValidationReport:
        """Fraction of area-weighted surface samples lying inside the shell."""
        return validate_containment(self.field, self._require_mesh().transformed(self.transform), samples, seed)


__all__ = [
    "DistanceMode",
    "FallbackPolicy",
    "ImplicitField",
    "ImplicitThinShell",
    "Label",
    "SimplifyMode",
    "TriangleMesh",
    "UnitTransform",
    "load_mesh",
]
