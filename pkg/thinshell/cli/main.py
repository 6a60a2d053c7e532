import contextlib
import csv
import pathlib
import time
import warnings
from typing import List, Optional

import numpy as np
import typer
from rich.console import Console
from rich.json import JSON
from rich.table import Table

from thinshell import ImplicitThinShell
from thinshell.cli.config import BuildConfig, OutputType, State
from thinshell.exceptions import InvalidParameterError, ThinShellError
from thinshell.extract import MAX_RESOLUTION, MIN_RESOLUTION, marching_cubes, resolve_level
from thinshell.extremity import collect_candidates, write_candidates_csv
from thinshell.field import slice_values
from thinshell.mesh import TriangleMesh, load_mesh, save_mesh
from thinshell.models import DistanceMode, FallbackPolicy, SimplifyMode
from thinshell.query import bench_compare, classify_batch, read_points, write_bench_csv, write_results
from thinshell.serialization import load_its
from thinshell.simplify import simplify as simplify_mesh
from thinshell.simplify import write_report
from thinshell.svo import MAX_HEIGHT, MIN_HEIGHT
from thinshell.utils.concurrency import THREADS_ENV
from thinshell.version import __version__

app = typer.Typer()

console = Console()
err_console = Console(stderr=True)
state: State = State()


@contextlib.contextmanager
def reported_errors():
    """Prints library warnings in yellow and turns library errors into a red message with exit code 1."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            yield
        except ThinShellError as e:
            err_console.print(f"[red]Error: {e}[/red]")
            raise typer.Exit(code=1)
        finally:
            for warning in caught:
                err_console.print(f"[yellow]Warning: {warning.message}[/yellow]")


def print_properties(title: str, data: dict):
    if state.output == OutputType.table:
        table = Table(title=title)
        table.add_column("Property", justify="left", style="cyan", no_wrap=True)
        table.add_column("Value", justify="right", style="green")
        for key, value in data.items():
            table.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
        console.print(table)
    else:
        console.print(JSON.from_data(data))


def parse_boxes(value: str) -> List[float]:
    """Parses `1..10` into the integers from 1 to 10, or a comma-separated list of box scales."""
    try:
        if ".." in value:
            start, stop = (int(v) for v in value.split(".."))
            boxes = [float(v) for v in range(start, stop + 1)]
        else:
            boxes = [float(v) for v in value.split(",")]
    except ValueError:
        raise typer.BadParameter(f"Expected a range like 1..10 or a list like 1,2,5, got '{value}'")
    if not boxes or any(b <= 0 for b in boxes):
        raise typer.BadParameter(f"Box scales must be positive, got '{value}'")
    return boxes


def version_callback(value: bool):
    if value:
        console.print(f"thinshellpy {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    output: OutputType = typer.Option("table", "--output", "-o", help="Output format: table or json"),
    version: bool = typer.Option(
        False, "--version", callback=version_callback, is_eager=True, help="Show the library version and exit."
    ),
):
    if output:
        state.output = output


@app.command()
def build(
    input_path: Optional[pathlib.Path] = typer.Option(None, "--in", help="Mesh file (OBJ, STL or PLY)"),
    k: Optional[int] = typer.Option(None, "--k", min=MIN_HEIGHT, max=MAX_HEIGHT, help="Octree height"),
    mode: Optional[DistanceMode] = typer.Option(None, "--mode", help="Signed or unsigned distance"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Relative tolerance of the solver"),
    max_iter: Optional[int] = typer.Option(None, "--max-iter", help="Iteration cap of the solver"),
    margin: Optional[float] = typer.Option(None, "--margin", help="Empty space around the mesh in the unit cube"),
    out: Optional[pathlib.Path] = typer.Option(None, "--out", help="Destination ITS file"),
    threads: Optional[int] = typer.Option(None, "--threads", envvar=THREADS_ENV, help="Worker threads"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed of the containment check"),
    validate_samples: Optional[int] = typer.Option(None, "--validate", help="Containment check samples after build"),
    config_file: Optional[pathlib.Path] = typer.Option(
        None, "--config", exists=True, dir_okay=False, help="YAML build configuration, flags override it"
    ),
    report: Optional[pathlib.Path] = typer.Option(None, "--report", help="Write the build report as JSON"),
    candidates: Optional[pathlib.Path] = typer.Option(None, "--candidates", help="Dump all candidate points as CSV"),
    save_config: Optional[pathlib.Path] = typer.Option(
        None, "--save-config", dir_okay=False, help="Write the effective configuration as YAML"
    ),
):
    """
    Builds the thin shell of a mesh and stores it as an ITS file.
    """
    with reported_errors():
        config = BuildConfig.load(config_file) if config_file else BuildConfig()
        config = config.merged(
            input=input_path,
            k=k,
            mode=mode,
            tol=tol,
            max_iter=max_iter,
            margin=margin,
            output=out,
            threads=threads,
            seed=seed,
            validate_samples=validate_samples,
        )
        if config.input is None or config.output is None:
            raise InvalidParameterError("Both the input mesh (--in) and the output file (--out) are required")
        if save_config:
            config.save(save_config)
        shell = ImplicitThinShell.build(
            config.input, config.k, config.mode, config.tol, config.max_iter, config.margin, config.threads
        )
        shell.save(config.output)
        build_report = shell.report
        data = {
            "k": build_report.k,
            "mode": build_report.mode.value,
            "faces": build_report.faces,
            "eps1": build_report.shell.eps1,
            "eps2": build_report.shell.eps2,
            "thickness": build_report.shell.thickness,
            "cells": build_report.cells,
            "gridPoints": build_report.grid_points,
            "residual": build_report.solve.residual,
            "iterations": build_report.solve.iterations,
        }
        data.update({f"{stage}Seconds": seconds for stage, seconds in build_report.stage_seconds.items()})
        if config.validate_samples:
            validation = shell.validate(config.validate_samples, config.seed)
            data["insideRatio"] = validation.ratio
        if candidates:
            unit_mesh = shell.mesh.transformed(shell.transform)
            write_candidates_csv(candidates, collect_candidates(shell.field, unit_mesh, config.threads))
        if report:
            report.write_text(build_report.model_dump_json(indent=2))
    print_properties("Build", data)


@app.command()
def query(
    its: pathlib.Path = typer.Option(..., "--its", exists=True, dir_okay=False, help="ITS file"),
    points: pathlib.Path = typer.Option(..., "--points", exists=True, dir_okay=False, help="One 'x y z' per line"),
    policy: FallbackPolicy = typer.Option(FallbackPolicy.ON_SURFACE, "--policy", help="Handling of shell points"),
    mesh: Optional[pathlib.Path] = typer.Option(None, "--mesh", exists=True, dir_okay=False, help="Model mesh"),
    out: pathlib.Path = typer.Option(..., "--out", help="Destination CSV"),
):
    """
    Classifies points as Inside, Outside or OnSurface.
    """
    with reported_errors():
        field = load_its(its)
        model_mesh = load_mesh(mesh) if mesh else None
        query_points = read_points(points)
        results, summary = classify_batch(field, query_points, policy, model_mesh)
        write_results(out, query_points, results)
    data = {
        "count": summary.count,
        "meanMicros": summary.mean_micros,
        "fallbackRate": summary.fallback_rate,
    }
    if summary.agreement is not None:
        data["agreement"] = summary.agreement
    print_properties("Query", data)


@app.command()
def extract(
    its: pathlib.Path = typer.Option(..., "--its", exists=True, dir_okay=False, help="ITS file"),
    level: str = typer.Option("zero", "--level", help="eps1, zero, eps2 or a number"),
    res: int = typer.Option(128, "--res", min=MIN_RESOLUTION, max=MAX_RESOLUTION, help="Samples per axis"),
    out: pathlib.Path = typer.Option(..., "--out", help="Destination OBJ"),
    model: bool = typer.Option(False, "--model", help="Write model coordinates instead of unit coordinates"),
    threads: Optional[int] = typer.Option(None, "--threads", envvar=THREADS_ENV, help="Worker threads"),
):
    """
    Extracts a level set of the field with marching cubes.
    """
    with reported_errors():
        field = load_its(its)
        level_set = marching_cubes(field, resolve_level(field, level), res, threads)
        result = level_set.mesh
        if model:
            result = TriangleMesh(field.transform.to_model(result.vertices), result.faces)
        save_mesh(result, out)
    print_properties(
        "Extract", {"level": level_set.level, "vertices": len(result.vertices), "faces": len(result.faces)}
    )


@app.command()
def simplify(
    input_path: pathlib.Path = typer.Option(..., "--in", exists=True, dir_okay=False, help="Mesh to simplify"),
    its: pathlib.Path = typer.Option(..., "--its", exists=True, dir_okay=False, help="ITS file of the mesh"),
    mode: SimplifyMode = typer.Option(SimplifyMode.CONSTRAINED, "--mode", help="constrained or global"),
    target: int = typer.Option(..., "--target", help="Target face count"),
    gamma: float = typer.Option(1.0, "--gamma", help="Weight of the field term in the global mode"),
    out: pathlib.Path = typer.Option(..., "--out", help="Destination OBJ"),
    report: Optional[pathlib.Path] = typer.Option(None, "--report", help="Write the report and collapse log as JSON"),
):
    """
    Simplifies a mesh by edge collapses guided by the shell.
    """
    with reported_errors():
        result = simplify_mesh(load_mesh(input_path), load_its(its), mode, target, gamma)
        save_mesh(result.mesh, out)
        if report:
            write_report(report, result)
    print_properties("Simplify", result.report.model_dump(mode="json"))


@app.command()
def bench(
    its: pathlib.Path = typer.Option(..., "--its", exists=True, dir_okay=False, help="ITS file"),
    mesh: pathlib.Path = typer.Option(..., "--mesh", exists=True, dir_okay=False, help="Model mesh"),
    boxes: str = typer.Option("1..10", "--boxes", help="Box scales, a range like 1..10 or a list like 1,2,5"),
    n: int = typer.Option(100000, "--n", min=0, help="Points per box"),
    seed: int = typer.Option(0, "--seed", help="Sampling seed"),
    out: pathlib.Path = typer.Option(..., "--out", help="Destination CSV"),
):
    """
    Compares the exact oracle with shell queries on uniform samples of growing boxes.
    """
    box_sizes = parse_boxes(boxes)
    with reported_errors():
        rows = bench_compare(load_its(its), load_mesh(mesh), box_sizes, n, seed)
        write_bench_csv(out, rows)
    if state.output == OutputType.table:
        table = Table(title="Bench")
        for column in ("Box", "Backend", "Mean us", "Fallback", "Agreement"):
            table.add_column(column, justify="right")
        for row in rows:
            table.add_row(
                f"{row.box_size:g}",
                row.backend,
                f"{row.mean_micros:.3f}",
                f"{row.fallback_rate:.4f}",
                f"{row.agreement:.4f}",
            )
        console.print(table)
    else:
        console.print(JSON.from_data([row.model_dump() for row in rows]))


@app.command()
def validate(
    its: pathlib.Path = typer.Option(..., "--its", exists=True, dir_okay=False, help="ITS file"),
    mesh: pathlib.Path = typer.Option(..., "--mesh", exists=True, dir_okay=False, help="Model mesh"),
    samples: int = typer.Option(10000, "--samples", min=1, help="Area-weighted surface samples"),
    seed: int = typer.Option(0, "--seed", help="Sampling seed"),
    strict: bool = typer.Option(False, "--strict", help="Exit with code 1 unless every sample is inside"),
):
    """
    Checks that surface samples lie inside the shell.
    """
    with reported_errors():
        shell = ImplicitThinShell.load(its, mesh)
        validation = shell.validate(samples, seed)
    print_properties(
        "Validate",
        {
            "samples": validation.samples,
            "inside": validation.inside,
            "ratio": f"{100.0 * validation.ratio:.2f}%",
            "lower": validation.lower,
            "upper": validation.upper,
        },
    )
    if strict and validation.inside != validation.samples:
        raise typer.Exit(code=1)


@app.command(name="slice")
def slice_command(
    its: pathlib.Path = typer.Option(..., "--its", exists=True, dir_okay=False, help="ITS file"),
    axis: str = typer.Option("z", "--axis", help="x, y or z"),
    offset: float = typer.Option(0.5, "--offset", help="Position of the slice in unit coordinates"),
    res: int = typer.Option(128, "--res", min=2, help="Samples per side"),
    out: pathlib.Path = typer.Option(..., "--out", help="Destination CSV"),
):
    """
    Writes the field on a planar slice of the unit cube.
    """
    with reported_errors():
        values = slice_values(load_its(its), axis, offset, res)
    axis_values = np.linspace(0.0, 1.0, res)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["u", "v", "f"])
        for i, u in enumerate(axis_values):
            for j, v in enumerate(axis_values):
                writer.writerow([repr(float(u)), repr(float(v)), repr(float(values[i, j]))])
    print_properties(
        "Slice", {"axis": axis, "offset": offset, "min": float(values.min()), "max": float(values.max())}
    )


@app.command()
def sweep(
    input_path: pathlib.Path = typer.Option(..., "--in", exists=True, dir_okay=False, help="Mesh file"),
    k_min: int = typer.Option(4, "--k-min", min=MIN_HEIGHT, max=MAX_HEIGHT, help="Smallest octree height"),
    k_max: int = typer.Option(9, "--k-max", min=MIN_HEIGHT, max=MAX_HEIGHT, help="Largest octree height"),
    mode: DistanceMode = typer.Option(DistanceMode.SIGNED, "--mode", help="Signed or unsigned distance"),
    out: pathlib.Path = typer.Option(..., "--out", help="Destination CSV"),
    threads: Optional[int] = typer.Option(None, "--threads", envvar=THREADS_ENV, help="Worker threads"),
):
    """
    Builds the shell for a range of octree heights and records thickness and build time.
    """
    if k_min > k_max:
        raise typer.BadParameter(f"--k-min {k_min} is larger than --k-max {k_max}")
    rows = []
    with reported_errors():
        model_mesh = load_mesh(input_path)
        for k in range(k_min, k_max + 1):
            start = time.perf_counter()
            shell = ImplicitThinShell.build(model_mesh, k, mode, threads=threads)
            seconds = time.perf_counter() - start
            rows.append(
                {
                    "k": k,
                    "eps1": shell.eps1,
                    "eps2": shell.eps2,
                    "thickness": shell.thickness,
                    "maxAbsEps": shell.shell.unsigned_bound,
                    "gridPoints": shell.report.grid_points,
                    "seconds": seconds,
                }
            )
    with open(out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    if state.output == OutputType.table:
        table = Table(title="Sweep")
        for column in rows[0].keys():
            table.add_column(column, justify="right")
        for row in rows:
            table.add_row(*(f"{value:.6g}" if isinstance(value, float) else str(value) for value in row.values()))
        console.print(table)
    else:
        console.print(JSON.from_data(rows))


@app.command()
def info(its: pathlib.Path = typer.Option(..., "--its", exists=True, dir_okay=False, help="ITS file")):
    """
    Shows the octree height, mode, shell interval and per-depth counts of an ITS file.
    """
    with reported_errors():
        field = load_its(its)
    data = {"k": field.height, "mode": field.mode.value, "scale": field.transform.scale}
    if field.shell is not None:
        data.update({"eps1": field.shell.eps1, "eps2": field.shell.eps2, "thickness": field.shell.thickness})
    if state.output == OutputType.table:
        print_properties("ITS", data)
        table = Table(title="Octree")
        table.add_column("Depth", justify="right", style="cyan")
        table.add_column("Cells", justify="right", style="green")
        table.add_column("Grid points", justify="right", style="green")
        for depth, (cells, grid_points) in enumerate(zip(field.svo.cell_counts, field.svo.grid_point_counts)):
            table.add_row(str(depth), str(cells), str(grid_points))
        console.print(table)
    else:
        data.update({"cells": field.svo.cell_counts, "gridPoints": field.svo.grid_point_counts})
        console.print(JSON.from_data(data))
