"""
Edge-collapse simplification with quadric error metrics, guided by the shell.

Every vertex carries the sum of the plane quadrics of its faces. Collapsing an edge moves both endpoints to the point
minimizing the summed quadric, and edges are collapsed cheapest first. The field enters in one of two ways:

- `constrained`: a collapse is only admitted when the field at its target lies strictly inside `(eps1, eps2)`.
- `global`: the priority becomes `cost + gamma * f(target)^2`, penalizing targets drifting away from the surface.

Without a field the `global` mode is plain quadric simplification.
"""

from __future__ import annotations

import heapq
import json
import pathlib
import warnings
from typing import List, NamedTuple, Optional, Set, Tuple, Union

import numpy as np

from thinshell.exceptions import InvalidParameterError, MissingShellError, SpaceMismatchError
from thinshell.field import ImplicitField
from thinshell.mesh import TriangleMesh
from thinshell.models import CollapseRecord, SimplifyMode, SimplifyReport

MIN_TARGET_FACES = 4
CONDITION_LIMIT = 1e8
BOUNDARY_WEIGHT = 1e3
UNIT_TOLERANCE = 1e-9


class SimplifyResult(NamedTuple):
    mesh: TriangleMesh
    report: SimplifyReport
    audit: List[CollapseRecord]


def quadric_error(quadrics: np.ndarray, points: np.ndarray) -> np.ndarray:
    """`[v, 1]^T Q [v, 1]` for matching stacks of `(4, 4)` quadrics and 3D points."""
    points = np.asarray(points, dtype=np.float64)
    homogeneous = np.concatenate([points, np.ones(points.shape[:-1] + (1,))], axis=-1)
    return np.einsum("...i,...ij,...j->...", homogeneous, quadrics, homogeneous)


def plane_quadrics(mesh: TriangleMesh) -> np.ndarray:
    """Quadric `p p^T` of every face, with `p = (n, -n . x0)` the unit plane of the face."""
    normals = mesh.face_normals
    offsets = -np.einsum("ij,ij->i", normals, mesh.triangles[:, 0])
    planes = np.hstack([normals, offsets[:, None]])
    return planes[:, :, None] * planes[:, None, :]


def _boundary_quadrics(mesh: TriangleMesh, weight: float) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrics of the planes through each boundary edge perpendicular to its face, with the edge endpoints."""
    half_edges = mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    owners = np.repeat(np.arange(len(mesh.faces)), 3)
    _, inverse, counts = np.unique(np.sort(half_edges, axis=1), axis=0, return_inverse=True, return_counts=True)
    boundary = counts[inverse.reshape(-1)] == 1
    if not boundary.any():
        return np.zeros((0, 4, 4)), np.zeros((0, 2), dtype=np.int64)
    ends = half_edges[boundary]
    start, stop = mesh.vertices[ends[:, 0]], mesh.vertices[ends[:, 1]]
    normals = np.cross(stop - start, mesh.face_normals[owners[boundary]])
    lengths = np.linalg.norm(normals, axis=1)
    usable = lengths > 0
    normals = normals[usable] / lengths[usable, None]
    planes = np.hstack([normals, -np.einsum("ij,ij->i", normals, start[usable])[:, None]])
    return weight * planes[:, :, None] * planes[:, None, :], ends[usable]


def compute_quadrics(mesh: TriangleMesh, boundary_weight: float = BOUNDARY_WEIGHT) -> np.ndarray:
    """
    Per-vertex quadrics as an array of shape `(n, 4, 4)`: the sum of the plane quadrics of the incident faces, plus
    boundary-edge constraint planes scaled by `boundary_weight` times the mean face area.

    :param mesh: the mesh to simplify.
    :param boundary_weight: relative weight of the boundary constraints; zero disables them.
    """
    quadrics = np.zeros((len(mesh.vertices), 4, 4))
    faces = plane_quadrics(mesh)
    for corner in range(3):
        np.add.at(quadrics, mesh.faces[:, corner], faces)
    if boundary_weight > 0:
        boundary, ends = _boundary_quadrics(mesh, boundary_weight * float(np.mean(mesh.face_areas)))
        for end in range(2):
            np.add.at(quadrics, ends[:, end], boundary)
    return quadrics


def optimal_contractions(quadrics: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batched `optimal_contraction`.

    :return: the targets, shape `(k, 3)`, and their quadric errors.
    """
    count = len(quadrics)
    rows = np.arange(count)
    choices = np.stack([0.5 * (a + b), a, b], axis=1)
    errors = quadric_error(quadrics[:, None], choices)
    # argmin keeps the first minimum, so ties go to the midpoint
    best = np.argmin(errors, axis=1)
    targets = choices[rows, best]
    target_errors = errors[rows, best]

    linear = quadrics[:, :3, :3]
    with np.errstate(divide="ignore", invalid="ignore"):
        conditions = np.linalg.cond(linear)
    solvable = np.flatnonzero(np.isfinite(conditions) & (conditions < CONDITION_LIMIT))
    if solvable.size:
        solved = np.linalg.solve(linear[solvable], -quadrics[solvable, :3, 3][..., None])[..., 0]
        solved_errors = quadric_error(quadrics[solvable], solved)
        better = solved_errors <= target_errors[solvable]
        targets[solvable[better]] = solved[better]
        target_errors[solvable[better]] = solved_errors[better]
    return targets, target_errors


def optimal_contraction(q: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Contraction target of an edge: the minimizer of `q` when its linear part has a condition number below `1e8`,
    otherwise the best of `a`, `b` and their midpoint (the midpoint wins ties).

    :param q: the summed quadric of both endpoints.
    :param a: first endpoint.
    :param b: second endpoint.
    """
    q, a, b = (np.asarray(x, dtype=np.float64)[None] for x in (q, a, b))
    targets, _ = optimal_contractions(q, a, b)
    return targets[0]


class _EdgeCollapser:
    def __init__(
        self,
        vertices: np.ndarray,
        faces: np.ndarray,
        quadrics: np.ndarray,
        field: Optional[ImplicitField],
        mode: SimplifyMode,
        gamma: float,
    ):
        self.vertices = np.array(vertices, dtype=np.float64)
        self.faces = np.array(faces, dtype=np.int64)
        self.quadrics = quadrics
        self.field = field
        self.mode = mode
        self.gamma = gamma
        self.alive = np.ones(len(faces), dtype=bool)
        self.removed = np.zeros(len(vertices), dtype=bool)
        self.locked = np.zeros(len(vertices), dtype=bool)
        self.version = np.zeros(len(vertices), dtype=np.int64)
        self.vertex_faces: List[Set[int]] = [set() for _ in range(len(vertices))]
        for face_id, face in enumerate(self.faces):
            for vertex in face:
                self.vertex_faces[vertex].add(face_id)
        self.face_count = len(faces)
        self.rejected = 0
        self.heap: List[tuple] = []
        self.audit: List[CollapseRecord] = []

    def neighbors(self, u: int) -> Set[int]:
        return {int(w) for f in self.vertex_faces[u] for w in self.faces[f]} - {u}

    def edge_faces(self, u: int, v: int) -> Set[int]:
        return self.vertex_faces[u] & self.vertex_faces[v]

    def is_boundary_vertex(self, u: int) -> bool:
        return any(len(self.edge_faces(u, w)) == 1 for w in self.neighbors(u))

    def lock_non_manifold(self, edges: np.ndarray):
        if len(edges):
            warnings.warn(f"Skipping collapses around {len(edges)} non-manifold edges")
            self.locked[edges.reshape(-1)] = True

    def push(self, edges: List[Tuple[int, int]]):
        edges = [(u, v) for u, v in edges if not (self.locked[u] or self.locked[v])]
        if not edges:
            return
        pairs = np.array(edges, dtype=np.int64)
        targets, costs = optimal_contractions(
            self.quadrics[pairs[:, 0]] + self.quadrics[pairs[:, 1]],
            self.vertices[pairs[:, 0]],
            self.vertices[pairs[:, 1]],
        )
        values = self.field.evaluate_many(targets) if self.field is not None else np.zeros(len(targets))
        for (u, v), target, cost, value in zip(edges, targets, costs, values):
            if self.mode == SimplifyMode.CONSTRAINED:
                if not self._inside_shell(value):
                    self.rejected += 1
                    continue
                priority = cost
            else:
                priority = cost + self.gamma * value * value
            entry = (float(priority), u, v, int(self.version[u]), int(self.version[v]), tuple(target), float(value))
            heapq.heappush(self.heap, entry)

    def _inside_shell(self, value: float) -> bool:
        shell = self.field.shell
        return shell.eps1 < value < shell.eps2

    def collapsible(self, u: int, v: int) -> bool:
        """Link condition, and no interior edge joining two boundary vertices."""
        shared = self.edge_faces(u, v)
        if not shared or len(shared) > 2:
            return False
        opposite = {int(w) for f in shared for w in self.faces[f]} - {u, v}
        if self.neighbors(u) & self.neighbors(v) != opposite:
            return False
        return not (len(shared) == 2 and self.is_boundary_vertex(u) and self.is_boundary_vertex(v))

    def flips(self, u: int, v: int, target: np.ndarray) -> bool:
        """Whether moving `u` and `v` to `target` turns any surviving face upside down."""
        for f in (self.vertex_faces[u] | self.vertex_faces[v]) - self.edge_faces(u, v):
            face = self.faces[f]
            corners = self.vertices[face]
            before = np.cross(corners[1] - corners[0], corners[2] - corners[0])
            corners[(face == u) | (face == v)] = target
            after = np.cross(corners[1] - corners[0], corners[2] - corners[0])
            if np.dot(before, after) <= 0:
                return True
        return False

    def collapse(self, u: int, v: int, target: np.ndarray):
        shared = self.edge_faces(u, v)
        for f in shared:
            self.alive[f] = False
            for w in self.faces[f]:
                self.vertex_faces[w].discard(f)
        for f in self.vertex_faces[v]:
            self.faces[f][self.faces[f] == v] = u
            self.vertex_faces[u].add(f)
        self.vertex_faces[v] = set()
        self.vertices[u] = target
        self.quadrics[u] += self.quadrics[v]
        self.removed[v] = True
        self.version[u] += 1
        self.version[v] += 1
        self.face_count -= len(shared)

    def run(self, target_faces: int):
        while self.face_count > target_faces and self.heap:
            priority, u, v, version_u, version_v, target, value = heapq.heappop(self.heap)
            if self.removed[u] or self.removed[v]:
                continue
            if self.version[u] != version_u or self.version[v] != version_v:
                continue
            if not self.collapsible(u, v):
                continue
            if self.mode == SimplifyMode.CONSTRAINED and not self._inside_shell(value):
                self.rejected += 1
                continue
            target = np.array(target)
            if self.flips(u, v, target):
                continue
            self.collapse(u, v, target)
            self.audit.append(
                CollapseRecord(keep=u, remove=v, target=tuple(target), f_value=value, priority=priority)
            )
            self.push([(min(u, w), max(u, w)) for w in sorted(self.neighbors(u))])

    def compacted(self) -> Tuple[np.ndarray, np.ndarray]:
        faces = self.faces[self.alive]
        used, inverse = np.unique(faces, return_inverse=True)
        return self.vertices[used], inverse.reshape(-1, 3)


def simplify(
    mesh: TriangleMesh,
    field: Optional[ImplicitField],
    mode: Union[SimplifyMode, str] = SimplifyMode.CONSTRAINED,
    target_faces: int = 1000,
    gamma: float = 1.0,
) -> SimplifyResult:
    """
    Collapses edges cheapest first until the mesh has at most `target_faces` faces or no admissible collapse is left.

    :param mesh: the mesh in the model coordinates of the field; the result uses the same coordinates.
    :param field: the field guiding the collapses. `None` with the `global` mode gives plain quadric simplification.
    :param mode: `constrained` only admits targets strictly inside the shell, `global` adds `gamma * f^2` to the cost.
    :param target_faces: face count to reach, at least 4.
    :param gamma: weight of the field term in the `global` mode.
    :return: the simplified mesh, the report and the log of executed collapses in execution order.
    """
    mode = SimplifyMode(mode)
    if target_faces < MIN_TARGET_FACES:
        raise InvalidParameterError(f"Target face count must be at least {MIN_TARGET_FACES}, got {target_faces}")
    if gamma < 0:
        raise InvalidParameterError(f"Gamma must not be negative, got {gamma}")
    if mode == SimplifyMode.CONSTRAINED and (field is None or field.shell is None):
        raise MissingShellError("Constrained simplification needs a field with its shell interval")

    transform = field.transform if field is not None else None
    vertices = transform.to_unit(mesh.vertices) if transform is not None else np.array(mesh.vertices)
    if field is not None and (np.any(vertices < -UNIT_TOLERANCE) or np.any(vertices > 1.0 + UNIT_TOLERANCE)):
        raise SpaceMismatchError("Mesh does not fit the unit cube of the field, pass it in its model coordinates")
    unit_mesh = TriangleMesh(vertices, mesh.faces)

    collapser = _EdgeCollapser(vertices, mesh.faces, compute_quadrics(unit_mesh), field, mode, gamma)
    edges, counts = unit_mesh.edge_face_counts()
    collapser.lock_non_manifold(edges[counts > 2])
    collapser.push([(int(u), int(v)) for u, v in edges])
    collapser.run(target_faces)

    exhausted = collapser.face_count > target_faces
    if exhausted:
        warnings.warn(
            f"No admissible collapse left at {collapser.face_count} faces, above the target of {target_faces}"
        )
    out_vertices, out_faces = collapser.compacted()
    if transform is not None:
        out_vertices = transform.to_model(out_vertices)
    report = SimplifyReport(
        mode=mode,
        gamma=gamma,
        initial_faces=len(mesh.faces),
        final_faces=len(out_faces),
        target_faces=target_faces,
        accepted_collapses=len(collapser.audit),
        rejected_collapses=collapser.rejected,
        max_abs_f=max((abs(record.f_value) for record in collapser.audit), default=0.0),
        exhausted=exhausted,
    )
    return SimplifyResult(TriangleMesh(out_vertices, out_faces), report, collapser.audit)


def audit_violations(result: SimplifyResult, field: ImplicitField) -> List[CollapseRecord]:
    """Executed collapses whose target, evaluated again, lies outside the open shell interval."""
    shell = field.shell
    if shell is None:
        raise MissingShellError("Auditing collapses needs the shell interval of the field")
    if not result.audit:
        return []
    values = field.evaluate_many(np.array([record.target for record in result.audit]))
    return [record for record, value in zip(result.audit, values) if not shell.eps1 < value < shell.eps2]


def write_report(path: Union[str, pathlib.Path], result: SimplifyResult, include_audit: bool = True):
    """Writes the report as JSON, with the collapse log under `collapses` when requested."""
    data = result.report.model_dump(mode="json")
    if include_audit:
        data["collapses"] = [record.model_dump(mode="json") for record in result.audit]
    pathlib.Path(path).write_text(json.dumps(data, indent=2))
