import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surfgauge import config
from surfgauge.config import ConfigError, ExperimentConfig, GridSpec
from surfgauge.elastic import MaterialParams
from surfgauge.gauge import DisclinationSpec, flat_vortex_potential
from surfgauge.grid import Grid, GridError
from surfgauge.io import read_field_csv, read_gauge_csv, write_field_csv, write_gauge_csv, write_manifest, write_vtk

G = Grid(5, 7, (0, 1), (-1, 1))


@given(data=st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=35, max_size=35))
@settings(max_examples=25, deadline=None)
def test_field_csv_round_trip_is_bit_exact(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("csv") / "f.csv"
    f = np.array(data).reshape(G.shape)
    write_field_csv(path, G, {"f": f})
    back = read_field_csv(path, G)
    assert np.array_equal(back["f"], f)
    assert np.array_equal(back["u"], G.mesh[0])


def test_field_csv_size_checks(tmp_path):
    with pytest.raises(GridError):
        write_field_csv(tmp_path / "a.csv", G, {"f": np.zeros(3)})
    write_field_csv(tmp_path / "a.csv", G, {"f": np.zeros(G.shape)}, coordinates=False)
    assert list(read_field_csv(tmp_path / "a.csv")) == ["f"]
    with pytest.raises(GridError):
        read_field_csv(tmp_path / "a.csv", Grid(4, 4))


def test_gauge_csv_round_trip(tmp_path):
    disk = Grid.disk(1.0, 6, 8)
    w = flat_vortex_potential(DisclinationSpec(frank_index=0.1), disk)
    write_gauge_csv(tmp_path / "w.csv", w)
    back = read_gauge_csv(tmp_path / "w.csv", disk)
    assert np.array_equal(back.W, w.W) and back.singular == w.singular and back.role == w.role


def test_vtk_header_and_counts(tmp_path):
    pts = np.stack(np.broadcast_arrays(*G.mesh, 0.0), -1)
    write_vtk(tmp_path / "g.vtk", G, pts, {"f": G.mesh[0], "n": np.ones(G.shape + (3,))})
    lines = (tmp_path / "g.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DIMENSIONS 7 5 1" in lines and "POINTS 35 double" in lines and "POINT_DATA 35" in lines
    assert "SCALARS f double 1" in lines and "VECTORS n double" in lines
    with pytest.raises(GridError):
        write_vtk(tmp_path / "bad.vtk", G, pts, {"f": np.zeros(3)})


def test_manifest_converts_numpy(tmp_path):
    write_manifest(tmp_path / "m.json", {"a": np.float64(1.5), "b": np.arange(3)})
    assert json.loads((tmp_path / "m.json").read_text()) == {"a": 1.5, "b": [0, 1, 2]}


EXAMPLE = """
[experiment]
scenario = sphere_disclination   # trailing comment
seed = 3

[grid]
radius = 0.8
n_r = 21
n_theta = 32

[material]
lambda = 2.0
kappa = 0.01
nu = 0.02

[defects]
d1 = 0.0, 0.0, 0.02

[solver]
tol = 1e-8

[options]
sphere_radius = 4.0
"""


def test_parse_example():
    cfg = config.loads(EXAMPLE)
    assert cfg.scenario == "sphere_disclination" and cfg.seed == 3
    assert cfg.grid == GridSpec(0.8, 21, 32)
    assert cfg.params.lam == 2.0 and cfg.params.mu == 1.0
    assert cfg.defect_specs == [DisclinationSpec((0.0, 0.0), 0.02)]
    assert cfg.tol == 1e-8 and cfg.max_iter == 60
    assert cfg.options == {"sphere_radius": 4.0}


@pytest.mark.parametrize("fmt", ["ini", "json"])
def test_round_trip(fmt, tmp_path):
    cfg = config.loads(EXAMPLE)
    assert config.loads(config.dumps(cfg, fmt), fmt) == cfg
    path = config.save(cfg, tmp_path / f"c.{fmt}")
    assert config.load(path) == cfg


@given(lam=st.floats(-0.009, 10), mu=st.floats(0.01, 10), kappa=st.floats(0, 10), tol=st.floats(1e-14, 1),
       n=st.integers(3, 200), seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_round_trip_property(lam, mu, kappa, tol, n, seed):
    cfg = ExperimentConfig("flat_disclination", GridSpec(1.0, n, 2 * n), MaterialParams(lam=lam, mu=mu, kappa=kappa),
                           tol=tol, seed=seed)
    assert config.loads(config.dumps(cfg)) == cfg
    assert config.loads(config.dumps(cfg, "json"), "json") == cfg


def test_default_defect_and_with_value():
    cfg = ExperimentConfig("flat_disclination", params=MaterialParams(nu=-0.1))
    assert cfg.defect_specs == [DisclinationSpec((0.0, 0.0), -0.1)]
    assert cfg.with_value("material.kappa", "0.5").params.kappa == 0.5
    with pytest.raises(ConfigError):
        cfg.with_value("kappa", 1)


@pytest.mark.parametrize("text, match", [
    ("[experiment]\nscenario = nope\n", "unknown scenario"),
    ("[grid]\nn_r = 5\n", "scenario is required"),
    ("[experiment]\nscenario = planar_ek\n[grid]\nn_r = ten\n", "expected a number"),
    ("[experiment]\nscenario = planar_ek\n[grid]\nn_r = 4.5\n", "expected an integer"),
    ("[experiment]\nscenario = planar_ek\n[grid]\nn_r = 2\n", "invalid grid"),
    ("[experiment]\nscenario = planar_ek\n[material]\nmu = -1\n", "material"),
    ("[experiment]\nscenario = planar_ek\n[material]\ncolour = 1\n", "material"),
    ("[experiment]\nscenario = planar_ek\n[boundary]\nf = glued\n", "boundary condition"),
    ("[experiment]\nscenario = planar_ek\n[solver]\ntol = 0\n", "tolerance"),
    ("[experiment]\nscenario = planar_ek\n[defects]\nd1 = 0, 0\n", "x, y, nu"),
    ("[experiment]\nscenario = planar_ek\n[extra]\na = 1\n", "unknown sections"),
    ("not an ini file", "syntax"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        config.loads(text)


def test_json_errors(tmp_path):
    with pytest.raises(ConfigError, match="invalid JSON"):
        config.loads("{", "json")
    with pytest.raises(ConfigError, match="object"):
        config.loads("[1]", "json")
    with pytest.raises(ConfigError, match="cannot read"):
        config.load(tmp_path / "missing.ini")
