"""Plain-text grid value files and CSV/JSON writers.

Grid value file layout::

    <dimension>
    <resolution per axis, whitespace separated>
    <extent per axis, whitespace separated>
    <value>            one per line, row-major over the node ring grid,
    ...                i.e. prod(resolution + 2) values including boundary nodes

Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .grid import Grid

TRAJECTORY_SCHEMA = "obstacle_flow trajectory v1"
STEPS_SCHEMA = "obstacle_flow steps v1"
STUDY_SCHEMA = "obstacle_flow study v1"


class GridFileError(ValueError):
    pass


def read_grid_file(path, grid: Grid | None = None) -> tuple[np.ndarray, int, tuple, tuple]:
    """Return ``(ring_values, dimension, resolution, extent)``.

    When ``grid`` is given the header must match it.
    """
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if len(lines) < 3:
        raise GridFileError(f"{path}: missing header")
    try:
        dim = int(lines[0])
        res = tuple(int(x) for x in lines[1].split())
        ext = tuple(float(x) for x in lines[2].split())
        values = np.array([float(x) for x in lines[3:]])
    except ValueError as exc:
        raise GridFileError(f"{path}: {exc}") from None
    if len(res) != dim or len(ext) != dim:
        raise GridFileError(f"{path}: header needs {dim} resolutions and extents")
    shape = tuple(n + 2 for n in res)
    if values.size != int(np.prod(shape)):
        raise GridFileError(f"{path}: expected {int(np.prod(shape))} values, got {values.size}")
    if grid is not None:
        if dim != grid.dimension or res != grid.resolution or not np.allclose(ext, grid.extent):
            raise GridFileError(f"{path}: header does not match the configured grid")
    return values.reshape(shape), dim, res, ext


def write_grid_file(path, grid: Grid, ring_values) -> None:
    ring_values = np.asarray(ring_values, dtype=float)
    if ring_values.shape != grid.ring_shape():
        raise GridFileError(f"values must have shape {grid.ring_shape()}")
    with open(path, "w") as fh:
        fh.write(f"{grid.dimension}\n")
        fh.write(" ".join(str(n) for n in grid.resolution) + "\n")
        fh.write(" ".join(repr(float(a)) for a in grid.extent) + "\n")
        for v in ring_values.ravel():
            fh.write(repr(float(v)) + "\n")


def fmt(value) -> str:
    """Deterministic text form: shortest round-trip repr for floats, 0/1 for bools."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, schema: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_dict_rows(path, schema: str, rows: list[dict]) -> None:
    header = list(rows[0].keys()) if rows else []
    write_csv(path, schema, header, ([r[k] for k in header] for r in rows))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
