import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surfgauge.elastic import MaterialParams
from surfgauge.gauge import DisclinationSpec
from surfgauge.geometry import SolverError
from surfgauge.grid import Grid, GridError
from surfgauge.vonkarman import (MembraneState, VkSource, azimuthal_power, buckling_comparison,
                                 classify_shape, delta_load, equilibrium_check, fit_cone_slope,
                                 flat_disclination_reference, solve_von_karman, von_karman_residual)

STIFF = MaterialParams(lam=1.0, mu=1.0, kappa=1e3)


def test_source_validation():
    with pytest.raises(ValueError):
        VkSource((DisclinationSpec((0, 0), 0.1), DisclinationSpec((0, 0), -0.1)))
    disk = Grid.disk(1.0, 11, 16)
    with pytest.raises(GridError):
        solve_von_karman(VkSource.single(0.1), STIFF, Grid(11, 11))
    with pytest.raises(ValueError):
        solve_von_karman(VkSource.single(0.1, center=(0.3, 0.0)), STIFF, disk)
    with pytest.raises(ValueError):
        solve_von_karman(VkSource.single(0.1), STIFF, disk, {"f": "hinged"})


def test_delta_load_integrates_to_flux():
    g = Grid(21, 21, (-1, 1), (-1, 1))
    load = delta_load(VkSource.single(0.2), g)
    assert np.sum(load * g.quadrature_weights()) == pytest.approx(2 * np.pi * 0.2)


def test_radial_reference_satisfies_free_edge():
    ref = flat_disclination_reference(0.1, 2.0, 1.5)
    assert ref.energy == pytest.approx(np.pi * 2.0 * 0.01 * 1.5**2 / 8, rel=1e-6)
    assert abs(ref.sigma_rr[-1]) < 1e-8 * np.abs(ref.sigma_tt).max()


def test_flat_solution_converges_to_oracle():
    ref = flat_disclination_reference(0.1, STIFF.k0, 1.0)
    errs = []
    for n_r, n_t in ((11, 16), (21, 32), (41, 64)):
        st_ = solve_von_karman(VkSource.single(0.1), STIFF, Grid.disk(1.0, n_r, n_t))
        assert np.abs(st_.f).max() == 0.0
        errs.append(abs(st_.energy / ref.energy - 1))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-2


def test_flat_energy_even_in_nu():
    disk = Grid.disk(1.0, 21, 32)
    e1 = solve_von_karman(VkSource.single(0.1), STIFF, disk).energy
    e2 = solve_von_karman(VkSource.single(-0.1), STIFF, disk).energy
    assert e1 == pytest.approx(e2, rel=1e-12)


def test_solver_error_when_iterations_run_out():
    disk = Grid.disk(1.0, 21, 32)
    r = disk.mesh[0]
    with pytest.raises(SolverError) as info:
        solve_von_karman(VkSource.single(1 / 6), MaterialParams(kappa=1e-3), disk, seed=0.5 * r, max_iter=1)
    assert info.value.iterations == 1


def test_solution_satisfies_residuals_and_equilibrium():
    disk = Grid.disk(1.0, 21, 32)
    p = MaterialParams(kappa=1e-2)
    r = disk.mesh[0]
    src = VkSource.single(1 / 6)
    st_ = solve_von_karman(src, p, disk, seed=np.sqrt(1 / 3) * r)
    r1, r2 = von_karman_residual(st_, src, p)
    # the apex row carries the finite-volume point load, so only rings 1.. are pointwise
    rings = slice(1, -2)
    assert np.abs(r1[rings]).max() < 1e-6
    assert np.abs(r2[rings]).max() < 1e-6
    assert classify_shape(st_) == "cone"
    assert 0.25 < fit_cone_slope(st_) < np.sqrt(1 / 3)


def test_equilibrium_check_manufactured():
    g = Grid(33, 33, (0, np.pi), (0, np.pi))
    x, y = g.mesh
    # chi = 0 leaves pure bending: Lap^2 (sin x sin y) = 4 sin x sin y
    st_ = MembraneState(g, np.sin(x) * np.sin(y), np.zeros_like(x))
    res = equilibrium_check(st_, MaterialParams(kappa=2.0))
    inner = ~g.boundary_mask(2)
    assert np.allclose(res[inner], 8 * np.sin(x)[inner] * np.sin(y)[inner], atol=2e-2)
    with pytest.raises(GridError):
        equilibrium_check(MembraneState(Grid.disk(1.0, 5, 8), np.zeros((5, 8)), np.zeros((5, 8))), STIFF)


@given(m=st.integers(0, 6), phase=st.floats(0, 2 * np.pi), amp=st.floats(0.1, 10))
@settings(max_examples=30, deadline=None)
def test_azimuthal_power_picks_single_mode(m, phase, amp):
    th = 2 * np.pi * np.arange(32) / 32
    p = azimuthal_power(amp * np.cos(m * th + phase) if m else np.full(32, amp))
    assert p.sum() == pytest.approx(1.0)
    assert p[m] == pytest.approx(1.0)


def test_classify_shape_labels():
    disk = Grid.disk(1.0, 9, 16)
    r, th = disk.mesh
    mk = lambda f: MembraneState(disk, f, np.zeros_like(f))
    assert classify_shape(mk(np.zeros_like(r))) == "flat"
    assert classify_shape(mk(0.4 * r)) == "cone"
    assert classify_shape(mk(r**2 * np.cos(2 * th))) == "saddle"
    assert classify_shape(mk(r * np.cos(3 * th))) == "other"
    assert fit_cone_slope(mk(0.4 * r)) == pytest.approx(0.4)


def test_buckling_comparison_branches():
    rep = buckling_comparison(1 / 6, MaterialParams(kappa=1e-2), Grid.disk(1.0, 21, 32))
    assert rep.shape_pos == "cone" and rep.shape_neg == "saddle"
    assert rep.e_buckled_pos < rep.e_flat_pos and rep.e_buckled_neg < rep.e_flat_neg
    assert rep.e_flat_pos == pytest.approx(rep.e_flat_neg)
    data = rep.to_mapping()
    assert data["margin"] == pytest.approx(rep.e_buckled_neg - rep.e_buckled_pos)
    assert {b["seed"] for b in data["branches"]} == {"flat", "cone", "saddle"}
