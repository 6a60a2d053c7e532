from __future__ import annotations

import csv
import pathlib
import time
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from thinshell.exceptions import InvalidParameterError, MissingShellError
from thinshell.field import ImplicitField
from thinshell.mesh import TriangleMesh, closest_points, inside_mask
from thinshell.models import BatchSummary, BenchRow, Classification, DistanceMode, FallbackPolicy, Label

PathLike = Union[str, pathlib.Path]

LABEL_ORDER = [Label.INSIDE, Label.OUTSIDE, Label.ON_SURFACE, Label.RESOLVED_INSIDE, Label.RESOLVED_OUTSIDE]
LABEL_CODES = {label: code for code, label in enumerate(LABEL_ORDER)}
BENCH_COLUMNS = ["boxSize", "backend", "meanMicros", "fallbackRate", "agreement"]


class LabelArrays(NamedTuple):
    """Vectorized classification: label codes (indices into `LABEL_ORDER`), field values and fallback flags."""

    codes: np.ndarray
    values: np.ndarray
    used_fallback: np.ndarray

    def inside(self) -> np.ndarray:
        """`1` for inside labels, `0` for outside labels and `-1` for `OnSurface`."""
        result = np.full(len(self.codes), -1, dtype=np.int8)
        result[np.isin(self.codes, [LABEL_CODES[Label.INSIDE], LABEL_CODES[Label.RESOLVED_INSIDE]])] = 1
        result[np.isin(self.codes, [LABEL_CODES[Label.OUTSIDE], LABEL_CODES[Label.RESOLVED_OUTSIDE]])] = 0
        return result


def _check(field: ImplicitField, policy: FallbackPolicy, mesh: Optional[TriangleMesh]):
    if field.shell is None:
        raise MissingShellError("Inside-outside queries need the shell interval of the field")
    if policy == FallbackPolicy.EXACT and mesh is None:
        raise InvalidParameterError("The exact fallback policy needs the mesh")


def classify_arrays(
    field: ImplicitField,
    points: np.ndarray,
    policy: Union[FallbackPolicy, str] = FallbackPolicy.ON_SURFACE,
    mesh: Optional[TriangleMesh] = None,
) -> LabelArrays:
    """
    Classifies model-space points through the shell. Points outside the root cell are outside; otherwise
    `f < eps1` is inside, `f > eps2` outside, and points in between are `OnSurface` or resolved by the winding number
    of the model-space mesh, depending on the policy. Unsigned fields only separate `f > max(|eps1|, |eps2|)` as
    outside.
    """
    policy = FallbackPolicy(policy)
    _check(field, policy, mesh)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    unit = field.transform.to_unit(points)
    in_root = np.all((unit >= 0.0) & (unit <= 1.0), axis=1)
    values = field.evaluate_many(unit)
    shell = field.shell

    codes = np.full(len(points), LABEL_CODES[Label.ON_SURFACE], dtype=np.int8)
    if field.mode == DistanceMode.UNSIGNED:
        # an unsigned field never decides inside
        codes[values > shell.unsigned_bound] = LABEL_CODES[Label.OUTSIDE]
    else:
        codes[values < shell.eps1] = LABEL_CODES[Label.INSIDE]
        codes[values > shell.eps2] = LABEL_CODES[Label.OUTSIDE]
    codes[~in_root] = LABEL_CODES[Label.OUTSIDE]
    used_fallback = np.zeros(len(points), dtype=bool)
    band = codes == LABEL_CODES[Label.ON_SURFACE]
    if policy == FallbackPolicy.EXACT and band.any():
        resolved = inside_mask(mesh, points[band])
        codes[band] = np.where(resolved, LABEL_CODES[Label.RESOLVED_INSIDE], LABEL_CODES[Label.RESOLVED_OUTSIDE])
        used_fallback = band
    return LabelArrays(codes, values, used_fallback)


def classify(
    field: ImplicitField,
    p: Sequence[float],
    policy: Union[FallbackPolicy, str] = FallbackPolicy.ON_SURFACE,
    mesh: Optional[TriangleMesh] = None,
) -> Classification:
    """
    Classifies one model-space point.

    :param field: field with a computed shell.
    :param p: the query point in model coordinates.
    :param policy: `on_surface` reports ambiguous points as such, `exact` resolves them with the winding number.
    :param mesh: the model-space mesh, required by the exact policy.
    """
    result = classify_arrays(field, np.asarray(p, dtype=np.float64).reshape(1, 3), policy, mesh)
    return Classification(
        label=LABEL_ORDER[int(result.codes[0])],
        f_value=float(result.values[0]),
        used_fallback=bool(result.used_fallback[0]),
    )


def oracle_agreement(field: ImplicitField, mesh: TriangleMesh, points: np.ndarray, labels: LabelArrays) -> float:
    """
    Fraction of labels agreeing with the exact winding-number oracle. `OnSurface` counts as correct when the point is
    within one shell thickness of the surface (measured in unit coordinates).
    """
    if len(points) == 0:
        return 1.0
    truth = inside_mask(mesh, points)
    distances, _, _ = closest_points(mesh, points)
    decided = labels.inside()
    correct = (decided == truth.astype(np.int8)) | (
        (decided == -1) & (distances * field.transform.scale <= field.shell.thickness)
    )
    return float(np.mean(correct))


def classify_batch(
    field: ImplicitField,
    points: np.ndarray,
    policy: Union[FallbackPolicy, str] = FallbackPolicy.ON_SURFACE,
    mesh: Optional[TriangleMesh] = None,
) -> Tuple[List[Classification], BatchSummary]:
    """
    Classifies a batch of model-space points and summarizes the run: mean time per query, fallback rate and, when the
    mesh is given, the agreement with the exact oracle.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    start = time.perf_counter()
    labels = classify_arrays(field, points, policy, mesh)
    elapsed = time.perf_counter() - start
    results = [
        Classification(label=LABEL_ORDER[int(code)], f_value=float(value), used_fallback=bool(fallback))
        for code, value, fallback in zip(labels.codes, labels.values, labels.used_fallback)
    ]
    if len(points) == 0:
        return results, BatchSummary()
    summary = BatchSummary(
        count=len(points),
        mean_micros=elapsed * 1e6 / len(points),
        fallback_rate=float(np.mean(labels.used_fallback | (labels.codes == LABEL_CODES[Label.ON_SURFACE]))),
        agreement=oracle_agreement(field, mesh, points, labels) if mesh is not None else None,
    )
    return results, summary


def sample_box(mesh: TriangleMesh, box_size: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the model bounding box scaled by `box_size` around its center."""
    low, high = mesh.bounds
    center, half = 0.5 * (low + high), 0.5 * (high - low) * box_size
    return rng.uniform(center - half, center + half, size=(n, 3))


def bench_compare(
    field: ImplicitField, mesh: TriangleMesh, box_sizes: Sequence[float], n: int = 100000, seed: int = 0
) -> List[BenchRow]:
    """
    Times the exact oracle, the shell alone and the shell with exact fallback on uniform samples of boxes of growing
    size.

    :param field: field with a computed shell.
    :param mesh: the model-space mesh.
    :param box_sizes: scale factors of the model bounding box.
    :param n: points per box; zero produces no rows.
    :param seed: sampling seed.
    """
    if field.shell is None:
        raise MissingShellError("Benchmarking needs the shell interval of the field")
    rows: List[BenchRow] = []
    if n == 0:
        return rows
    rng = np.random.default_rng(seed)
    for box_size in box_sizes:
        points = sample_box(mesh, box_size, n, rng)

        start = time.perf_counter()
        inside_mask(mesh, points)
        exact_micros = (time.perf_counter() - start) * 1e6 / n
        rows.append(
            BenchRow(box_size=box_size, backend="exact", mean_micros=exact_micros, fallback_rate=1.0, agreement=1.0)
        )

        for backend, policy in (("shell", FallbackPolicy.ON_SURFACE), ("shell+exact", FallbackPolicy.EXACT)):
            start = time.perf_counter()
            labels = classify_arrays(field, points, policy, mesh)
            micros = (time.perf_counter() - start) * 1e6 / n
            fallback = labels.used_fallback | (labels.codes == LABEL_CODES[Label.ON_SURFACE])
            rows.append(
                BenchRow(
                    box_size=box_size,
                    backend=backend,
                    mean_micros=micros,
                    fallback_rate=float(np.mean(fallback)),
                    agreement=oracle_agreement(field, mesh, points, labels),
                )
            )
    return rows


def write_bench_csv(path: PathLike, rows: List[BenchRow]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(BENCH_COLUMNS)
        for row in rows:
            writer.writerow([row.box_size, row.backend, row.mean_micros, row.fallback_rate, row.agreement])


def read_points(path: PathLike) -> np.ndarray:
    """Reads one `x y z` point per line; blank lines and lines starting with `#` are skipped."""
    points = []
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if len(tokens) != 3:
                raise InvalidParameterError(f"Line {line_number} of {path} does not hold three coordinates")
            try:
                points.append([float(t) for t in tokens])
            except ValueError:
                raise InvalidParameterError(f"Line {line_number} of {path} has a malformed coordinate")
    return np.array(points, dtype=np.float64).reshape(-1, 3)


def write_results(path: PathLike, points: np.ndarray, results: List[Classification]):
    """Writes `x,y,z,f,label,usedFallback` rows."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "z", "f", "label", "usedFallback"])
        for (x, y, z), result in zip(np.asarray(points).reshape(-1, 3), results):
            writer.writerow(
                [
                    repr(float(x)),
                    repr(float(y)),
                    repr(float(z)),
                    repr(result.f_value),
                    result.label.value,
                    str(result.used_fallback).lower(),
                ]
            )
