"""Command-line experiment driver.

::

    surfgauge run CONFIG [--out-dir DIR] [--tol T] [--max-iter N] [--seed S]
    surfgauge sweep CONFIG --param section.key=a,b,c [--jobs N] [...]
    surfgauge export RUN_DIR --format csv|vtk

Outputs go to ``--out-dir``, else the config's ``out_dir``, else
``$SURFGAUGE_OUT/<scenario>``, else ``./surfgauge-out/<scenario>``.  Exit
status is 0 on success, 2 for configuration errors and 3 for solver
failures.
"""
from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import io
from .config import ConfigError, ExperimentConfig, dumps, load
from .covariant import SurfaceProblem, solve_single_disclination
from .gauge import (GaugeField, disclination_density, flat_vortex_potential, planar_reference_metric,
                    reference_metric_with_defects)
from .geometry import MetricField, SolverError
from .grid import Embedding, Grid, GridError
from .minimizer import minimize_shape, total_energy
from .vonkarman import (VkSource, buckling_comparison, fit_cone_slope, flat_disclination_reference,
                        solve_von_karman)

log = logging.getLogger("surfgauge")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
ENV_OUT = "SURFGAUGE_OUT"


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"surfgauge": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def export_fields(grid: Grid, fields: dict, fmt, path, *, points=None):
    """Write nodal fields as CSV or legacy VTK.

    ``points`` (``(n_u, n_v, 3)``) places the VTK nodes; by default the flat
    map of the grid.  An empty field dict raises ``ValueError`` before
    anything is written.
    """
    if not fields:
        raise ValueError("no fields to export")
    path = Path(path)
    try:
        if fmt == "csv":
            return io.write_field_csv(path, grid, fields)
        if fmt == "vtk":
            if points is None:
                x, y = grid.planar_coordinates
                points = np.stack([x, y, np.zeros_like(x)], axis=-1)
            return io.write_vtk(path, grid, points, fields)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    raise ValueError(f"unknown export format {fmt!r}")


# -- scenarios ---------------------------------------------------------------------


def _disk(cfg):
    g = cfg.grid
    return Grid.disk(g.radius, g.n_r, g.n_theta)


def _single_nu(cfg):
    specs = cfg.defect_specs
    if len(specs) != 1 or np.hypot(*specs[0].center) > 1e-12:
        raise ConfigError(f"scenario {cfg.scenario} takes one defect at the origin")
    return specs[0].frank_index


def _flat_disclination(cfg, out):
    grid, p = _disk(cfg), cfg.params
    nu = _single_nu(cfg)
    st = solve_von_karman(VkSource.single(nu), p, grid, cfg.bc, tol=cfg.tol, max_iter=cfg.max_iter)
    ref = flat_disclination_reference(nu, p.k0, cfg.grid.radius)
    x, y = grid.planar_coordinates
    io.write_field_csv(out / "fields.csv", grid, {"x": x, "y": y, "f": st.f, "chi": st.chi},
                       coordinates=False)
    return {
        "residual": st.residual, "iterations": st.iterations,
        "energy": st.energy, "bending_energy": st.bending_energy,
        "stretching_energy": st.stretching_energy,
        "reference_energy": ref.energy,
        "relative_error": abs(st.energy - ref.energy) / ref.energy,
    }


def _buckling(cfg, out):
    grid, p = _disk(cfg), cfg.params
    nu = abs(_single_nu(cfg))
    rep = buckling_comparison(nu, p, grid, bc=cfg.bc, tol=cfg.tol, max_iter=cfg.max_iter,
                              seed_scale=cfg.options.get("seed_scale", 1.0),
                              noise=cfg.options.get("noise", 0.0), rng=cfg.seed)
    x, y = grid.planar_coordinates
    for tag, st in rep.states.items():
        io.write_field_csv(out / f"fields_{tag}.csv", grid, {"x": x, "y": y, "f": st.f, "chi": st.chi},
                           coordinates=False)
    data = rep.to_mapping()
    data["cone_slope(+)"] = fit_cone_slope(rep.states["pos"])
    data["residual"] = max(st.residual for st in rep.states.values())
    return data


def _sphere(cfg, out):
    p = cfg.params.replace(nu=_single_nu(cfg))
    sphere_r = cfg.options.get("sphere_radius", 5.0)
    g = cfg.grid
    try:
        prob = SurfaceProblem.spherical_cap(sphere_r, g.radius, g.n_r, g.n_theta, p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    st = solve_single_disclination(prob, cfg.bc, tol=cfg.tol, max_iter=cfg.max_iter,
                                   validity_threshold=cfg.options.get("validity_threshold", 0.2))
    w = prob.gauge_field(core_radius=cfg.options.get("core_radius", 0.2 * g.radius))
    dens = disclination_density(w, prob.metric)
    io.write_field_csv(out / "fields.csv", prob.grid, {"Rz0": st.Rz0, "Rz": st.Rz, "trE": st.trE,
                                                      "density": dens})
    return {"residual": st.residual, "iterations": st.iterations, "energy": st.energy,
            "bending_energy": st.bending_energy, "stretching_energy": st.stretching_energy,
            "max_delta_n": st.max_delta_n, "valid": st.valid,
            "density_integral": prob.metric.integrate(dens), "expected_flux": 2 * np.pi * p.nu}


def _planar_ek(cfg, out):
    # flat square membrane with originally distributed (smoothed) defects in W0, W = 0
    g, p = cfg.grid, cfg.params
    grid = Grid(g.n_r, g.n_r, (-g.radius, g.radius), (-g.radius, g.radius))
    rc = cfg.options.get("core_radius", 2 * grid.h_u)
    W = sum(flat_vortex_potential(d, grid, core_radius=rc).W for d in cfg.defect_specs)
    w0 = GaugeField.abelian(grid, W[..., 0, 2], W[..., 1, 2], role="reference")
    e0 = Embedding.flat(grid)
    g_ref = reference_metric_with_defects(e0, w0)
    closed = planar_reference_metric(e0, w0)
    dens = disclination_density(w0, MetricField.euclidean(grid))
    # the defects live only in the reference; the elastic energy measures their incompatibility
    w = GaugeField.zeros(grid)
    data = {"metric_identity_error": float(np.abs(g_ref.g - closed).max()),
            "density_integral": MetricField.euclidean(grid).integrate(dens),
            "expected_flux": 2 * np.pi * sum(d.frank_index for d in cfg.defect_specs)}
    e = e0
    if cfg.options.get("minimize", 0.0):
        rng = np.random.default_rng(cfg.seed)
        pos = e0.positions.copy()
        pos[..., 2] += cfg.options.get("noise", 1e-3) * rng.standard_normal(grid.shape)
        rep = minimize_shape(e0.with_positions(pos), w, e0, w0, p, gtol=cfg.tol, max_iter=cfg.max_iter,
                             fix_tilt=False)
        if not rep.converged:
            raise SolverError(f"minimizer stopped: {rep.message}", rep.gradient_norm, rep.iterations)
        e = rep.embedding
        data.update(iterations=rep.iterations, residual=rep.gradient_norm)
    data["energies"] = total_energy(e, w, e0, w0, p).to_mapping()
    x = e.positions
    io.write_field_csv(out / "fields.csv", grid, {
        "x": x[..., 0], "y": x[..., 1], "z": x[..., 2], "density": dens,
        "g11": g_ref.g[..., 0, 0], "g12": g_ref.g[..., 0, 1], "g22": g_ref.g[..., 1, 1]})
    return data


SCENARIO_RUNNERS = {
    "flat_disclination": _flat_disclination,
    "buckling_comparison": _buckling,
    "sphere_disclination": _sphere,
    "planar_ek": _planar_ek,
}


def validate(cfg: ExperimentConfig):
    """Scenario-level checks that must pass before anything is written."""
    if cfg.scenario != "planar_ek":
        _single_nu(cfg)
    if cfg.scenario == "sphere_disclination" and cfg.grid.radius >= cfg.options.get("sphere_radius", 5.0):
        raise ConfigError("cap radius must stay below options.sphere_radius")


def output_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return Path(os.environ.get(ENV_OUT, "surfgauge-out")) / cfg.scenario


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> int:
    """Run one scenario and write ``config.ini``, field CSVs and ``manifest.json``.

    Returns the process exit status.
    """
    validate(cfg)
    out = output_dir(cfg, out_dir)
    runner = SCENARIO_RUNNERS[cfg.scenario]
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"scenario": cfg.scenario, "versions": _versions(), "params": cfg.params.to_mapping(),
                "grid": {"radius": cfg.grid.radius, "n_r": cfg.grid.n_r, "n_theta": cfg.grid.n_theta},
                "seed": cfg.seed}
    (out / "config.ini").write_text(dumps(cfg))
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        manifest["results"] = runner(cfg, out)
        manifest["status"] = "ok"
    except SolverError as exc:
        status = EXIT_SOLVER
        manifest["status"] = "solver_failure"
        manifest["error"] = {"message": str(exc), "residual": exc.residual, "iterations": exc.iterations}
        log.error("solver failure: %s", exc)
    manifest["wall_time"] = time.perf_counter() - t0
    io.write_manifest(out / "manifest.json", manifest)
    return status


def _apply_overrides(cfg, args):
    changes = {}
    if args.tol is not None:
        changes["tol"] = args.tol
    if args.max_iter is not None:
        changes["max_iter"] = args.max_iter
    if args.seed is not None:
        changes["seed"] = args.seed
    return replace(cfg, **changes) if changes else cfg


def _parse_param(spec):
    key, sep, values = spec.partition("=")
    if not sep or not values:
        raise ConfigError(f"--param must look like section.key=a,b,c, got {spec!r}")
    return key.strip(), [v.strip() for v in values.split(",") if v.strip()]


def _sweep_one(job):
    cfg, out = job
    return run_experiment(cfg, out)


def _export(run_dir, fmt):
    import json

    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{run_dir}: not a run directory ({exc})") from None
    g = manifest["grid"]
    if manifest["scenario"] == "planar_ek":
        grid = Grid(g["n_r"], g["n_r"], (-g["radius"], g["radius"]), (-g["radius"], g["radius"]))
    else:
        grid = Grid.disk(g["radius"], g["n_r"], g["n_theta"])
    written = []
    for csv_path in sorted(run_dir.glob("fields*.csv")):
        fields = io.read_field_csv(csv_path, grid)
        for k in ("u", "v"):
            fields.pop(k, None)
        x, y = grid.planar_coordinates
        x, y = fields.pop("x", x), fields.pop("y", y)
        height = next((fields[k] for k in ("z", "Rz", "f") if k in fields), np.zeros_like(x))
        points = np.stack([x, y, height], axis=-1)
        target = csv_path.with_suffix("." + fmt)
        if fmt == "csv":
            target = csv_path.with_name(csv_path.stem + "_export.csv")
        written.append(export_fields(grid, fields, fmt, target, points=points))
    if not written:
        raise ConfigError(f"{run_dir}: no field files to export")
    return written


def build_parser():
    parser = argparse.ArgumentParser(prog="surfgauge", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="INI or JSON experiment file")
        p.add_argument("--out-dir", help=f"output directory (default from config or ${ENV_OUT})")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--seed", type=int)

    common(sub.add_parser("run", help="run one experiment"))
    sw = sub.add_parser("sweep", help="run an experiment for each value of a parameter")
    common(sw)
    sw.add_argument("--param", required=True, help="section.key=a,b,c")
    sw.add_argument("--jobs", type=int, default=1)
    ex = sub.add_parser("export", help="convert the field files of a run directory")
    ex.add_argument("run_dir")
    ex.add_argument("--format", choices=("csv", "vtk"), default="vtk")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "export":
            for path in _export(args.run_dir, args.format):
                print(path)
            return EXIT_OK
        cfg = _apply_overrides(load(args.config), args)
        if args.command == "run":
            return run_experiment(cfg, args.out_dir)
        key, values = _parse_param(args.param)
        root = output_dir(cfg, args.out_dir)
        jobs = [(cfg.with_value(key, v), root / f"{key}={v}") for v in values]
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                codes = list(pool.map(_sweep_one, jobs))
        else:
            codes = [_sweep_one(j) for j in jobs]
        return max(codes, default=EXIT_OK)
    except (ConfigError, GridError) as exc:
        print(f"surfgauge: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
