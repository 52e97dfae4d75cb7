"""Experiment configuration: an INI-style grammar with a JSON alternative.

Grammar (``configparser`` syntax, ``#`` comments)::

    [experiment]
    scenario = flat_disclination      # see SCENARIOS
    seed = 0                          # integer, perturbation RNG seed
    out_dir = runs/flat               # optional; CLI and $SURFGAUGE_OUT override

    [grid]
    radius = 1.0                      # disk radius (or half-width of a square)
    n_r = 41                          # rings including the centre (or nodes per side)
    n_theta = 64

    [material]
    lambda = 1.0
    mu = 1.0
    kappa = 1.0
    kappa_g = 0.0
    s = 1.0
    nu = 0.1666666666666667

    # optional; name = x, y, frank_index
    [defects]
    d1 = 0.0, 0.0, 0.1666666666666667

    [boundary]
    f = free                          # free | clamped
    chi = free-stress

    [solver]
    tol = 1e-9
    max_iter = 60

    # scenario-specific numbers
    [options]
    sphere_radius = 5.0

When ``[defects]`` is absent a single defect of index ``material.nu`` sits
at the origin.  Every value written by :func:`dumps` is the shortest repr, so
parse, serialize and parse again gives an equal config.
"""
from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .elastic import MaterialParams
from .gauge import DisclinationSpec
from .vonkarman import BOUNDARY_CONDITIONS

SCENARIOS = ("flat_disclination", "buckling_comparison", "sphere_disclination", "planar_ek")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class GridSpec:
    radius: float = 1.0
    n_r: int = 41
    n_theta: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    grid: GridSpec = field(default_factory=GridSpec)
    params: MaterialParams = field(default_factory=MaterialParams)
    defects: tuple = ()
    bc: dict = field(default_factory=lambda: {"f": "free", "chi": "free-stress"})
    tol: float = 1e-9
    max_iter: int = 60
    out_dir: str | None = None
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if not self.tol > 0:
            raise ConfigError("solver tolerance must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.grid.radius <= 0 or self.grid.n_r < 3 or self.grid.n_theta < 4:
            raise ConfigError(f"invalid grid {self.grid}")
        for key, allowed in BOUNDARY_CONDITIONS.items():
            if self.bc.get(key) not in allowed:
                raise ConfigError(f"boundary condition {key}={self.bc.get(key)!r} not in {allowed}")
        if set(self.bc) - set(BOUNDARY_CONDITIONS):
            raise ConfigError(f"unknown boundary keys {sorted(set(self.bc) - set(BOUNDARY_CONDITIONS))}")

    @property
    def defect_specs(self):
        """Defects as :class:`DisclinationSpec`, defaulting to one at the origin."""
        if self.defects:
            return [DisclinationSpec((x, y), nu) for x, y, nu in self.defects]
        return [DisclinationSpec((0.0, 0.0), self.params.nu)]

    def with_value(self, key, value):
        """Copy with one dotted key (``section.name``) replaced, as used by sweeps."""
        section, _, name = key.partition(".")
        data = to_mapping(self)
        if not name or section not in data or not isinstance(data[section], dict):
            raise ConfigError(f"sweep key must look like section.name, got {key!r}")
        data[section][name] = value
        return from_mapping(data)


def _float(section, key, value):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}") from None


def _int(section, key, value):
    f = _float(section, key, value)
    if f != int(f):
        raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}")
    return int(f)


def from_mapping(data) -> ExperimentConfig:
    """Build a config from nested ``{section: {key: value}}`` data."""
    known = {"experiment", "grid", "material", "defects", "boundary", "solver", "options"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    exp = dict(data.get("experiment", {}))
    if "scenario" not in exp:
        raise ConfigError("[experiment] scenario is required")
    g = data.get("grid", {})
    bad = set(g) - {"radius", "n_r", "n_theta"}
    if bad:
        raise ConfigError(f"unknown grid keys {sorted(bad)}")
    grid = GridSpec(_float("grid", "radius", g.get("radius", 1.0)),
                    _int("grid", "n_r", g.get("n_r", 41)),
                    _int("grid", "n_theta", g.get("n_theta", 64)))
    mat = {k: _float("material", k, v) for k, v in data.get("material", {}).items()}
    try:
        params = MaterialParams.from_mapping(mat)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[material] {exc}") from None
    defects = []
    for name, value in data.get("defects", {}).items():
        parts = value.split(",") if isinstance(value, str) else list(value)
        if len(parts) != 3:
            raise ConfigError(f"[defects] {name}: expected 'x, y, nu'")
        defects.append(tuple(_float("defects", name, v) for v in parts))
    solver = data.get("solver", {})
    options = {k: _float("options", k, v) for k, v in data.get("options", {}).items()}
    return ExperimentConfig(
        scenario=str(exp["scenario"]),
        grid=grid,
        params=params,
        defects=tuple(defects),
        bc={"f": "free", "chi": "free-stress", **dict(data.get("boundary", {}))},
        tol=_float("solver", "tol", solver.get("tol", 1e-9)),
        max_iter=_int("solver", "max_iter", solver.get("max_iter", 60)),
        out_dir=exp.get("out_dir") or None,
        seed=_int("experiment", "seed", exp.get("seed", 0)),
        options=options,
    )


def to_mapping(cfg: ExperimentConfig) -> dict:
    exp = {"scenario": cfg.scenario, "seed": cfg.seed}
    if cfg.out_dir is not None:
        exp["out_dir"] = cfg.out_dir
    return {
        "experiment": exp,
        "grid": asdict(cfg.grid),
        "material": cfg.params.to_mapping(),
        "defects": {f"d{k + 1}": list(d) for k, d in enumerate(cfg.defects)},
        "boundary": dict(cfg.bc),
        "solver": {"tol": cfg.tol, "max_iter": cfg.max_iter},
        "options": dict(cfg.options),
    }


def loads(text: str, fmt="ini") -> ExperimentConfig:
    """Parse config text; ``fmt`` is ``"ini"`` or ``"json"``."""
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return from_mapping(data)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from None
    return from_mapping({s: dict(parser[s]) for s in parser.sections()})


def dumps(cfg: ExperimentConfig, fmt="ini") -> str:
    data = to_mapping(cfg)
    if fmt == "json":
        return json.dumps(data, indent=2) + "\n"
    lines = []
    for section, values in data.items():
        if not values:
            continue
        lines.append(f"[{section}]")
        for k, v in values.items():
            if isinstance(v, list):
                v = ", ".join(repr(float(c)) for c in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


def load(path) -> ExperimentConfig:
    """Read a config file; ``.json`` files use the JSON form."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return loads(text, "json" if path.suffix.lower() == ".json" else "ini")


def save(cfg: ExperimentConfig, path):
    path = Path(path)
    path.write_text(dumps(cfg, "json" if path.suffix.lower() == ".json" else "ini"))
    return path


__all__ = ["SCENARIOS", "ConfigError", "GridSpec", "ExperimentConfig", "from_mapping", "to_mapping",
           "loads", "dumps", "load", "save"]
