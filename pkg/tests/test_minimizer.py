import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from surfgauge.elastic import MaterialParams
from surfgauge.gauge import DisclinationSpec, GaugeField, flat_vortex_potential
from surfgauge.grid import Embedding, Grid, GridError
from surfgauge.minimizer import (EnergyModel, energy_gradient, equilibrium_residual, minimize_shape,
                                 tilt_constraints, total_energy)

G = Grid(13, 13, (-1, 1), (-1, 1))
E0 = Embedding.flat(G)
W0 = GaugeField.zeros(G, role="reference")
P = MaterialParams(lam=1.0, mu=1.0, kappa=0.05, kappa_g=-0.01)


def _wavy(amp=0.1):
    x, y = G.mesh
    pos = E0.positions.copy()
    pos[..., 0] += 0.05 * np.sin(2 * y)
    pos[..., 2] = amp * np.cos(x) * np.sin(y + 0.3)
    return E0.with_positions(pos)


def test_model_rejects_mismatched_and_polar_grids():
    with pytest.raises(GridError):
        EnergyModel(GaugeField.zeros(Grid(5, 5)), E0, W0, P)
    disk = Grid.disk(1.0, 5, 8)
    with pytest.raises(GridError):
        EnergyModel(GaugeField.zeros(disk), Embedding.flat(disk), GaugeField.zeros(disk), P)


def test_reference_state_has_zero_energy():
    b = total_energy(E0, GaugeField.zeros(G), E0, W0, P)
    assert b.elastic == b.yang_mills == b.bending == b.gaussian_bending == 0.0


def test_energy_parts_sum_and_gradient_shape():
    e = _wavy()
    b = total_energy(e, GaugeField.zeros(G), E0, W0, P)
    assert b.elastic > 0 and b.bending > 0
    grad = energy_gradient(e, GaugeField.zeros(G), E0, W0, P)
    assert grad.shape == G.shape + (3,)
    val, _ = EnergyModel(GaugeField.zeros(G), E0, W0, P).value_and_grad(e.positions.reshape(-1, 3))
    assert val == pytest.approx(b.elastic + b.yang_mills + b.bending + b.gaussian_bending)


@given(quat=st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1),
       shift=st.lists(st.floats(-3, 3), min_size=3, max_size=3))
@settings(max_examples=15, deadline=None)
def test_energy_invariant_under_rigid_motion_without_gauge_field(quat, shift):
    e = _wavy()
    R = Rotation.from_quat(quat).as_matrix()
    moved = e.with_positions(e.positions @ R.T + np.asarray(shift))
    w = GaugeField.zeros(G)
    a, b = total_energy(e, w, E0, W0, P), total_energy(moved, w, E0, W0, P)
    assert a.elastic == pytest.approx(b.elastic, rel=1e-9)
    assert a.bending == pytest.approx(b.bending, rel=1e-9)
    assert a.gaussian_bending == pytest.approx(b.gaussian_bending, rel=1e-9, abs=1e-14)
    # translations commute with the gradient, rotations rotate it
    g1 = energy_gradient(e, w, E0, W0, P)
    g2 = energy_gradient(moved, w, E0, W0, P)
    assert np.allclose(g1 @ R.T, g2, atol=1e-9)


@given(seed=st.integers(0, 2**16))
@settings(max_examples=10, deadline=None)
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    x, y = G.mesh
    W = 0.1 * rng.standard_normal(G.shape + (2, 3))
    model = EnergyModel(GaugeField(G, W), E0, W0, P)
    pos = _wavy().positions.reshape(-1, 3) + 0.02 * rng.standard_normal((G.n_u * G.n_v, 3))
    _, grad = model.value_and_grad(pos)
    d = rng.standard_normal(pos.shape)
    d /= np.linalg.norm(d)
    eps = 1e-5
    fd = (model.value_and_grad(pos + eps * d)[0] - model.value_and_grad(pos - eps * d)[0]) / (2 * eps)
    assert fd == pytest.approx(float((grad * d).sum()), rel=1e-5, abs=1e-9)


def test_tilt_constraints_vanish_on_flat_and_detect_tilt():
    area = np.ones(G.n_u * G.n_v)
    c = tilt_constraints(G, (), area)
    assert c.shape == (2, 3 * G.n_u * G.n_v)
    x, y = G.mesh
    tilted = E0.positions.copy()
    tilted[..., 2] = 0.3 * x
    assert np.allclose(c @ E0.positions.ravel(), 0)
    assert abs((c @ tilted.ravel())[0]) > 0 and abs((c @ tilted.ravel())[1]) < 1e-12


def test_minimizer_relaxes_to_reference():
    w = GaugeField.zeros(G)
    rep = minimize_shape(_wavy(), w, E0, W0, P.replace(kappa_g=0.0), gtol=1e-7, max_iter=500)
    assert rep.converged
    assert rep.energy < 1e-10
    assert all(b <= a + 1e-15 for a, b in zip(rep.energies, rep.energies[1:]))


def test_unknown_boundary_condition():
    with pytest.raises(ValueError):
        minimize_shape(_wavy(), GaugeField.zeros(G), E0, W0, P, bc="sliding")


def test_pinned_boundary_stays_put():
    w = GaugeField.zeros(G)
    start = _wavy()
    rep = minimize_shape(start, w, E0, W0, P, bc="pinned", gtol=1e-6, max_iter=300, fix_tilt=False)
    edge = G.boundary_mask()
    assert np.array_equal(rep.embedding.positions[edge], start.positions[edge])


def _cone_setup(n=17):
    g = Grid(n, n, (-1, 1), (-1, 1))
    e0 = Embedding.flat(g)
    w = flat_vortex_potential(DisclinationSpec((0.0, 0.0), 0.1), g)
    x, y = g.mesh
    pos = e0.positions.copy()
    pos[..., 2] = np.sqrt(0.2) * np.hypot(x, y)
    return g, e0, w, GaugeField.zeros(g, role="reference"), e0.with_positions(pos)


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    g, e0, w, w0, start = _cone_setup()
    p = MaterialParams(kappa=1e-2)
    full = minimize_shape(start, w, e0, w0, p, gtol=1e-6, max_iter=400)
    minimize_shape(start, w, e0, w0, p, gtol=1e-6, max_iter=5, checkpoint_dir=tmp_path, checkpoint_every=5)
    assert (tmp_path / "positions.csv").exists() and (tmp_path / "manifest.json").exists()
    resumed = minimize_shape(start, w, e0, w0, p, gtol=1e-6, max_iter=400, checkpoint_dir=tmp_path, resume=True)
    assert resumed.converged
    assert resumed.energy == pytest.approx(full.energy, rel=1e-6)


def test_equilibrium_residual_small_at_minimizer():
    g, e0, w, w0, start = _cone_setup()
    p = MaterialParams(kappa=1e-2)
    rep = minimize_shape(start, w, e0, w0, p, gtol=1e-6, max_iter=400)
    force, gauge = equilibrium_residual(rep.embedding, w, e0, w0, p)
    assert force.shape == g.shape + (3,) and gauge.shape == g.shape + (2, 3)
    x, y = g.mesh
    mask = np.zeros(g.shape, bool)
    mask[2:-2, 2:-2] = True
    mask &= np.hypot(x, y) > 4 * g.h_u
    assert np.linalg.norm(force[mask], axis=-1).max() <= 10 * 1e-6
    strong, _ = equilibrium_residual(rep.embedding, w, e0, w0, p, form="strong")
    assert strong.shape == force.shape
