import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from surfgauge.elastic import (MaterialParams, StrainField, elastic_energy, k0, linearized_membrane_strain,
                               strain_tensor, stress_density, stress_vectors)
from surfgauge.gauge import (DisclinationSpec, GaugeField, NonAbelianFieldError, UnboundedEnergyWarning,
                             covariant_vortex_potential, disclination_density, field_strength,
                             flat_vortex_potential, loop_flux, planar_reference_metric,
                             reference_metric_with_defects, yang_mills_energy)
from surfgauge.geometry import MetricField, induced_metric
from surfgauge.grid import Embedding, Grid, GridError

SQUARE = Grid(17, 17, (-1, 1), (-1, 1))


def test_spec_and_field_validation():
    with pytest.raises(ValueError):
        DisclinationSpec(frank_index=0.0)
    with pytest.raises(GridError):
        GaugeField(SQUARE, np.zeros((17, 17, 3)))
    with pytest.raises(ValueError):
        GaugeField.zeros(SQUARE, role="other")


def test_flat_vortex_registers_singular_node_only_without_core():
    disk = Grid.disk(1.0, 11, 16)
    w = flat_vortex_potential(DisclinationSpec(frank_index=0.1), disk)
    assert w.singular == ((0, 0, 0.1),)
    assert w.is_abelian()
    assert flat_vortex_potential(DisclinationSpec(frank_index=0.1), disk, core_radius=0.2).singular == ()
    # on a disk the azimuthal component is exactly nu
    assert np.allclose(w.W[1:, :, 1, 2], 0.1)


@pytest.mark.parametrize("ring", [1, 5, 10])
def test_loop_flux_independent_of_radius(ring):
    w = flat_vortex_potential(DisclinationSpec(frank_index=-0.25), Grid.disk(1.0, 11, 24))
    assert loop_flux(w, ring) == pytest.approx(-0.5 * np.pi, abs=1e-12)
    with pytest.raises(GridError):
        loop_flux(GaugeField.zeros(SQUARE), 1)


def test_abelian_field_strength_is_curl():
    u, v = SQUARE.mesh
    w = GaugeField.abelian(SQUARE, -v * u, u**2)
    F = field_strength(w)
    assert np.allclose(F.F12[..., 2], 2 * u + u, atol=1e-10)
    assert np.allclose(F.F12[..., :2], 0)
    assert np.array_equal(F.component(1, 0), -F.F12)
    assert not F.component(0, 0).any()


def test_density_rejects_non_abelian_field():
    W = np.zeros(SQUARE.shape + (2, 3))
    W[..., 0, 0] = 1.0
    with pytest.raises(NonAbelianFieldError):
        disclination_density(GaugeField(SQUARE, W), MetricField.euclidean(SQUARE))


def test_yang_mills_warns_without_core_cutoff():
    w = flat_vortex_potential(DisclinationSpec(frank_index=0.1), Grid.disk(1.0, 11, 16))
    m = MetricField.euclidean(w.grid)
    with pytest.warns(UnboundedEnergyWarning):
        yang_mills_energy(field_strength(w), m, 1.0, singular=w.singular, core_radius=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert yang_mills_energy(field_strength(w), m, 1.0, singular=w.singular) >= 0


def test_covariant_vortex_matches_flat_vortex_on_disk():
    disk = Grid.disk(1.0, 41, 32)
    d = DisclinationSpec(frank_index=0.1)
    wc = covariant_vortex_potential(d, MetricField.euclidean(disk))
    wf = flat_vortex_potential(d, disk)
    assert wc.singular[0][2] == pytest.approx(0.1)
    inner = slice(6, 40)  # the derivative of log r carries an (h/r)^2 error near the apex
    assert np.allclose(wc.W[inner, :, 1, 2], wf.W[inner, :, 1, 2], rtol=1e-2)


@given(coef=st.lists(st.floats(-0.3, 0.3), min_size=4, max_size=4))
@settings(max_examples=25, deadline=None)
def test_planar_reference_metric_matches_expanded_form(coef):
    e0 = Embedding.flat(SQUARE)
    u, v = SQUARE.mesh
    w0 = GaugeField.abelian(SQUARE, coef[0] * u + coef[1], coef[2] * v * u + coef[3], role="reference")
    assert np.allclose(planar_reference_metric(e0, w0), reference_metric_with_defects(e0, w0).g, atol=1e-12)


def _bumpy():
    return Embedding.from_function(SQUARE, lambda x, y: (x + 0.1 * y**2, y, 0.2 * np.sin(x) * y))


def test_strain_vanishes_at_reference():
    e = _bumpy()
    E = strain_tensor(induced_metric(e), e, GaugeField.zeros(SQUARE))
    assert np.abs(E.E).max() < 1e-14


@given(quat=st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1))
@settings(max_examples=20, deadline=None)
def test_strain_and_energy_invariant_under_rotation(quat):
    e = _bumpy()
    R = Rotation.from_quat(quat).as_matrix()
    m = MetricField.euclidean(SQUARE)
    p = MaterialParams(lam=0.7, mu=1.3)
    w = GaugeField.zeros(SQUARE)
    E1 = strain_tensor(m, e, w)
    E2 = strain_tensor(m, e.with_positions(e.positions @ R.T), w)
    assert np.allclose(E1.E, E2.E, atol=1e-12)
    assert elastic_energy(E1, m, p) == pytest.approx(elastic_energy(E2, m, p), rel=1e-12)


def test_uniform_dilation_energy():
    m = MetricField.euclidean(SQUARE)
    p = MaterialParams(lam=2.0, mu=0.5)
    eps = 0.01
    E = strain_tensor(m, Embedding.from_function(SQUARE, lambda x, y: (np.sqrt(1 + eps) * x, np.sqrt(1 + eps) * y, 0 * x)),
                      GaugeField.zeros(SQUARE))
    expected = 0.125 * (p.lam * (2 * eps) ** 2 + 2 * p.mu * 2 * eps**2) * 4.0
    assert elastic_energy(E, m, p) == pytest.approx(expected, rel=1e-10)


def test_stress_and_stress_vectors():
    m = MetricField.euclidean(SQUARE)
    p = MaterialParams(lam=2.0, mu=0.5)
    E = np.zeros(SQUARE.shape + (2, 2))
    E[..., 0, 0] = 0.02
    rho = stress_density(StrainField(SQUARE, E), m, p)
    assert np.allclose(rho.rho[..., 0, 0], (p.lam + 2 * p.mu) * 0.02)
    assert np.allclose(rho.rho[..., 1, 1], p.lam * 0.02)
    sig = stress_vectors(Embedding.flat(SQUARE), GaugeField.zeros(SQUARE), rho)
    assert np.allclose(sig.sigma[..., 0, 0], 0.5 * rho.rho[..., 0, 0])


def test_linearized_strain_is_the_small_amplitude_limit():
    u, v = SQUARE.mesh
    e0 = Embedding.flat(SQUARE)
    disp = np.stack([np.sin(u) * v, np.cos(v) * u], -1)
    f = np.sin(u + 2 * v)
    wz = 0.3 * np.cos(u * v)
    errs = []
    for d in (1e-2, 5e-3):
        w = GaugeField.abelian(SQUARE, d**2 * wz, -d**2 * wz)
        pos = e0.positions + np.concatenate([d**2 * disp, d * f[..., None]], -1)
        full = strain_tensor(MetricField.euclidean(SQUARE), Embedding(SQUARE, pos), w).E
        lin = linearized_membrane_strain(d**2 * disp, d * f, w, e0).E
        errs.append(np.abs(full - lin).max() / d**2)
    assert errs[1] < 0.3 * errs[0] and errs[1] < 1e-4


def test_material_params():
    with pytest.raises(ValueError):
        MaterialParams(mu=0.0)
    with pytest.raises(ValueError):
        MaterialParams(lam=-2.0, mu=1.0)
    with pytest.raises(ValueError):
        MaterialParams(kappa=-1.0)
    p = MaterialParams.from_mapping({"lambda": 3.0, "mu": 1.0, "kappa_G": -0.5})
    assert (p.lam, p.kappa_g) == (3.0, -0.5)
    assert MaterialParams.from_mapping(p.to_mapping()) == p
    assert p.replace(mu=2.0).mu == 2.0 and p.replace(**{"lambda": 1.5}).lam == 1.5
    assert k0(p) == pytest.approx(4 * 1.0 * 4.0 / 5.0)
    assert k0((3.0, 1.0)) == pytest.approx(p.k0)
    assert p.poisson_ratio == pytest.approx(0.6)
