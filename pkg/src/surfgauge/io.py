"""Field export and import: CSV tables, legacy VTK grids and JSON manifests.

CSV files are node-major (``u`` slow, ``v`` fast) with one header row; floats
are written with ``repr`` so a read-back reproduces them bit for bit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .gauge import GaugeField
from .grid import Grid, GridError


def _columns(grid, fields):
    cols = {}
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype=float)
        if arr.size != grid.n_u * grid.n_v:
            raise GridError(f"field {name!r} has {arr.size} values for {grid.n_u * grid.n_v} nodes")
        cols[name] = arr.ravel()
    return cols


def write_field_csv(path, grid: Grid, fields: dict, *, coordinates=True):
    """Write scalar nodal fields as columns, prefixed by the ``u, v`` coordinates."""
    cols = _columns(grid, fields)
    uu, vv = grid.mesh
    header = (["u", "v"] if coordinates else []) + list(cols)
    data = ([uu.ravel(), vv.ravel()] if coordinates else []) + list(cols.values())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*data):
            writer.writerow([repr(float(v)) for v in row])
    return Path(path)


def read_field_csv(path, grid: Grid | None = None):
    """Read a CSV written by :func:`write_field_csv` into ``{name: array}``.

    With ``grid`` the columns are reshaped to ``grid.shape`` and the node
    count is checked.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    out = {name: data[:, k] for k, name in enumerate(header)}
    if grid is not None:
        if len(rows) != grid.n_u * grid.n_v:
            raise GridError(f"{path}: {len(rows)} rows for a {grid.shape} grid")
        out = {k: v.reshape(grid.shape) for k, v in out.items()}
    return out


def write_gauge_csv(path, w: GaugeField):
    """Gauge potential as ``u, v, W1x..W2z`` plus a JSON sidecar listing vortices."""
    names = [f"W{a + 1}{c}" for a in range(2) for c in "xyz"]
    fields = {n: w.W[..., a, c] for n, (a, c) in zip(names, [(a, c) for a in range(2) for c in range(3)])}
    path = write_field_csv(path, w.grid, fields)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"singular": [list(s) for s in w.singular], "role": w.role}, indent=2))
    return path


def read_gauge_csv(path, grid: Grid) -> GaugeField:
    fields = read_field_csv(path, grid)
    W = np.zeros(grid.shape + (2, 3))
    for a in range(2):
        for c, comp in enumerate("xyz"):
            W[..., a, c] = fields[f"W{a + 1}{comp}"]
    meta = json.loads(Path(path).with_suffix(".json").read_text())
    singular = tuple((int(i), int(j), float(nu)) for i, j, nu in meta["singular"])
    return GaugeField(grid, W, singular, meta.get("role", "dynamical"))


def write_vtk(path, grid: Grid, points, fields: dict):
    """Legacy ASCII VTK ``STRUCTURED_GRID`` with nodal scalar and vector data.

    ``points`` is ``(n_u, n_v, 3)``; each field is ``(n_u, n_v)`` or
    ``(n_u, n_v, 3)``.  VTK orders points with the first index fastest, so
    ``v`` maps to the VTK x dimension.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    n = len(pts)
    lines = ["# vtk DataFile Version 3.0", "surfgauge export", "ASCII", "DATASET STRUCTURED_GRID",
             f"DIMENSIONS {grid.n_v} {grid.n_u} 1", f"POINTS {n} double"]
    lines += [" ".join(repr(float(c)) for c in p) for p in pts]
    if fields:
        lines.append(f"POINT_DATA {n}")
    for name, arr in fields.items():
        arr = np.asarray(arr, float)
        if arr.shape == grid.shape:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in arr.ravel()]
        elif arr.shape == grid.shape + (3,):
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(repr(float(c)) for c in v) for v in arr.reshape(-1, 3)]
        else:
            raise GridError(f"field {name!r} has unsupported shape {arr.shape}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def write_manifest(path, data: dict):
    """JSON manifest; numpy scalars and arrays are converted to plain values."""
    def plain(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"cannot serialize {type(o).__name__}")

    Path(path).write_text(json.dumps(data, indent=2, default=plain))
    return Path(path)
