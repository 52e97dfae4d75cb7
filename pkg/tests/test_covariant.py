import warnings

import numpy as np
import pytest

from surfgauge.covariant import (CovariantState, LinearizationWarning, SurfaceProblem, covariant_residual,
                                 covariant_strain, max_normal_deviation, solve_single_disclination,
                                 trE_prefactors)
from surfgauge.elastic import MaterialParams
from surfgauge.gauge import GaugeField
from surfgauge.grid import Embedding, Grid, GridError
from surfgauge.vonkarman import VkSource, solve_von_karman

P = MaterialParams(lam=1.0, mu=1.0, kappa=1e-2, nu=0.02)


def test_problem_validation():
    g = Grid(9, 9, (-1, 1), (-1, 1))
    with pytest.raises(GridError):
        SurfaceProblem(Embedding.flat(g), P)
    disk = Grid.disk(1.0, 9, 16)
    x, y = disk.planar_coordinates
    with pytest.raises(ValueError):
        SurfaceProblem(Embedding(disk, np.stack([1.1 * x, y, 0 * x], -1)), P)
    with pytest.raises(ValueError):
        SurfaceProblem.monge(lambda x, y: 0.3 * x, 1.0, 9, 16, P)
    with pytest.raises(ValueError):
        SurfaceProblem.spherical_cap(1.0, 1.0, 9, 16, P)


def test_no_defect_leaves_curved_reference_unstrained():
    prob = SurfaceProblem.spherical_cap(2.0, 0.8, 21, 32, P.replace(nu=0.0))
    # the validity measure includes the reference's own normal variation over the patch
    with pytest.warns(LinearizationWarning):
        st = solve_single_disclination(prob)
    assert st.max_delta_n == pytest.approx(max_normal_deviation(prob.grid, prob.z0))
    assert np.abs(st.Rz - st.Rz0).max() < 1e-12
    assert np.abs(st.trE).max() < 1e-12
    assert st.energy == pytest.approx(0.0, abs=1e-20)


def test_flat_reference_equals_von_karman():
    prob = SurfaceProblem.monge(lambda x, y: 0 * x, 1.0, 21, 32, P)
    st = solve_single_disclination(prob)
    vk = solve_von_karman(VkSource.single(P.nu), P, prob.grid)
    assert np.allclose(st.Rz, vk.f) and np.allclose(st.chi, vk.chi)
    assert st.energy == pytest.approx(vk.energy)


def test_solution_satisfies_covariant_residual():
    prob = SurfaceProblem.spherical_cap(5.0, 1.0, 21, 32, P)
    st = solve_single_disclination(prob, validity_threshold=1.0)
    res_z, res_tr = covariant_residual(prob, st, prob.gauge_field())
    rings = slice(1, -2)  # the apex row carries the point load
    assert np.abs(res_z[rings]).max() < 1e-6
    assert np.abs(res_tr[rings]).max() < 1e-6


def test_validity_warning_threshold():
    prob = SurfaceProblem.spherical_cap(5.0, 1.0, 21, 32, P)
    with pytest.warns(LinearizationWarning):
        st = solve_single_disclination(prob, validity_threshold=1e-3)
    assert not st.valid and st.max_delta_n > 1e-3
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert solve_single_disclination(prob, validity_threshold=1.0).valid


def test_large_sphere_approaches_flat():
    flat = solve_single_disclination(SurfaceProblem.monge(lambda x, y: 0 * x, 1.0, 21, 32, P), validity_threshold=1.0)
    e = [solve_single_disclination(SurfaceProblem.spherical_cap(R, 1.0, 21, 32, P), validity_threshold=1.0).energy
         for R in (10.0, 100.0)]
    assert abs(e[1] - flat.energy) < abs(e[0] - flat.energy)
    assert e[1] == pytest.approx(flat.energy, rel=1e-2)


def test_prefactor_spellings_agree():
    for lam, mu in ((1.0, 1.0), (0.3, 2.7), (-0.5, 1.0)):
        a, b = trE_prefactors(MaterialParams(lam=lam, mu=mu))
        assert a == pytest.approx(b, rel=1e-15)


def test_covariant_strain_zero_for_undeformed_reference():
    prob = SurfaceProblem.spherical_cap(3.0, 0.8, 11, 16, P)
    g = prob.grid
    state = CovariantState(g, prob.z0, np.zeros(g.shape), np.zeros(g.shape), prob.z0)
    E = covariant_strain(prob, state, np.zeros(g.shape + (2,)), GaugeField.zeros(g))
    assert np.abs(E.E).max() == 0.0
    W = np.zeros(g.shape + (2, 3))
    W[..., 0, 0] = 1.0
    with pytest.raises(ValueError):
        covariant_strain(prob, state, np.zeros(g.shape + (2,)), GaugeField(g, W))


def test_max_normal_deviation_of_cone():
    disk = Grid.disk(1.0, 11, 16)
    r = disk.mesh[0]
    # z = a r tilts the normal by atan(a) away from the apex
    a = 0.5
    expected = 2 * np.sin(np.arctan(a) / 2)
    assert max_normal_deviation(disk, a * r) == pytest.approx(expected, rel=1e-6)
