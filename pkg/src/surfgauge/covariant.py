"""Single disclination on a curved reference surface.

The reference surface is given in Monge form over a disk,
``R0 = (r cos t, r sin t, z0(r, t))``, with the defect at the centre.  The
vertical coordinate ``Rz`` and the strain trace ``trE`` obey the covariant
counterparts of the flat von Karman equations; the transverse balance
``D_b rho^ab = 0`` is solved through a covariant Airy function ``chi`` with
``sigma^ab = rho^ab / 2 = eps^ac eps^bd D_c D_d chi`` and
``trE = Lap chi / (lambda + mu)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._plate import PlateSystem
from .elastic import MaterialParams, StrainField
from .gauge import DisclinationSpec, GaugeField, covariant_vortex_potential
from .geometry import LEVI_CIVITA_2D, MetricField, SolverError
from .grid import Embedding, Grid, GridError

log = logging.getLogger(__name__)


class LinearizationWarning(UserWarning):
    """The deformed normal strays too far from the reference normal at the defect."""


def _monge_metric(grid, z0):
    g = MetricField.euclidean(grid).g.copy()
    dz = np.stack([grid.d(z0, "u"), grid.d(z0, "v")], axis=-1)
    g += dz[..., :, None] * dz[..., None, :]
    return MetricField(grid, g)


def _extend(z):
    # one ghost ring by quadratic extrapolation in r
    ghost = 3 * z[-1] - 3 * z[-2] + z[-3]
    return np.vstack([z, ghost[None]])


def trE_prefactors(p: MaterialParams):
    """The two spellings of the strain-trace prefactor: ``lam/2mu + 1`` and ``2 (lam/4mu + 1/2)``."""
    return p.lam / (2 * p.mu) + 1, 2 * (p.lam / (4 * p.mu) + 0.5)


@dataclass(frozen=True)
class SurfaceProblem:
    """Reference surface, defect and material for a single-disclination solve.

    Parameters
    ----------
    reference : Embedding
        Monge-form reference on a ``disk-polar`` grid; the defect sits at
        the apex, where the reference normal must be ``(0, 0, 1)``.
    params : MaterialParams
        ``params.nu`` is the Frank index of the defect.
    """

    reference: Embedding
    params: MaterialParams

    def __post_init__(self):
        grid = self.reference.grid
        if not grid.is_polar:
            raise GridError("surface problems live on disk-polar grids centred on the defect")
        x, y = grid.planar_coordinates
        pos = self.reference.positions
        if np.abs(pos[..., 0] - x).max() > 1e-12 or np.abs(pos[..., 1] - y).max() > 1e-12:
            raise ValueError("reference must be in Monge form over the disk")
        ring = pos[1, :, 2]
        tilt = 2 * np.abs(np.sum(ring * np.exp(1j * grid.v))) / grid.n_v / grid.h_u
        if tilt > 1e-6:
            raise ValueError("the z axis must be normal to the reference at the defect")

    @classmethod
    def monge(cls, height, radius, n_r, n_theta, params):
        """Sample ``height(x, y)`` on a disk grid."""
        grid = Grid.disk(radius, n_r, n_theta)
        x, y = grid.planar_coordinates
        return cls(Embedding(grid, np.stack([x, y, height(x, y)], axis=-1)), params)

    @classmethod
    def spherical_cap(cls, sphere_radius, radius, n_r, n_theta, params):
        if radius >= sphere_radius:
            raise ValueError("cap radius must stay below the sphere radius")
        return cls.monge(lambda x, y: np.sqrt(sphere_radius**2 - x**2 - y**2) - sphere_radius,
                         radius, n_r, n_theta, params)

    @property
    def grid(self):
        return self.reference.grid

    @property
    def z0(self):
        return self.reference.positions[..., 2]

    @property
    def defect(self):
        return DisclinationSpec((0.0, 0.0), self.params.nu)

    @cached_property
    def metric(self):
        return _monge_metric(self.grid, self.z0)

    @cached_property
    def connection(self):
        return self.metric.operators.connection

    def gauge_field(self, **green_kwargs) -> GaugeField:
        """Covariant vortex potential of the defect on the reference metric."""
        return covariant_vortex_potential(self.defect, self.metric, **green_kwargs)


@dataclass
class CovariantState:
    grid: Grid
    Rz: np.ndarray
    trE: np.ndarray
    chi: np.ndarray
    Rz0: np.ndarray
    iterations: int = 0
    residual: float = float("nan")
    max_delta_n: float = 0.0
    valid: bool = True
    bending_energy: float = float("nan")
    stretching_energy: float = float("nan")

    @property
    def energy(self):
        return self.bending_energy + self.stretching_energy


def covariant_strain(prob: SurfaceProblem, state: CovariantState, u_perp, w: GaugeField) -> StrainField:
    """Linearized strain of a Monge reference with z-only gauge field.

    ``E_ab = d_a R0 . d_b U + eps_(alpha beta) d_a R0^beta R0^alpha W_b + (a <-> b)
    + d_a Rz d_b Rz - d_a Rz0 d_b Rz0`` with ``alpha, beta`` in-plane.
    """
    if not w.is_abelian():
        raise ValueError("covariant_strain takes a z-only gauge field")
    grid = prob.grid
    d = lambda f: np.stack([grid.d(f, "u"), grid.d(f, "v")], axis=-2)  # [..., a, comp]
    r0 = prob.reference.positions[..., :2]
    d_r0 = d(r0)
    d_u = d(np.asarray(u_perp, float))
    rot = np.einsum("ab,...a->...b", LEVI_CIVITA_2D, r0)  # eps_(alpha beta) R0^alpha
    gauge = np.einsum("...ab,...b->...a", d_r0, rot)[..., :, None] * w.W[..., None, :, 2]
    half = np.einsum("...ak,...bk->...ab", d_r0, d_u) + gauge
    dz = np.stack([grid.d(state.Rz, "u"), grid.d(state.Rz, "v")], axis=-1)
    dz0 = np.stack([grid.d(state.Rz0, "u"), grid.d(state.Rz0, "v")], axis=-1)
    E = (half + np.swapaxes(half, -1, -2) + dz[..., :, None] * dz[..., None, :]
         - dz0[..., :, None] * dz0[..., None, :])
    return StrainField(grid, E)


def covariant_residual(prob: SurfaceProblem, state: CovariantState, w: GaugeField | None = None):
    """Nodal residuals ``(res_z, res_trE)`` of the covariant system.

    ``res_z = kappa Lap^2 (Rz - Rz0) - (1/2) D_a D_b Rz rho^ab`` and
    ``res_trE = (lam/2mu + 1) Lap trE + [Rz, Rz] - [Rz0, Rz0] - 4 pi nu delta / sqrt(g)``,
    where ``[Rz, Rz] = (Lap Rz)^2 - D_a D_b Rz D^a D^b Rz``.  The point load
    is read from the vortex registry of ``w`` when given, otherwise from
    ``prob.params.nu``.
    """
    grid, p = prob.grid, prob.params
    ops = prob.metric.operators
    L = ops.laplacian
    rz, rz0 = grid.to_reduced(state.Rz), grid.to_reduced(state.Rz0)
    chi, tre = grid.to_reduced(state.chi), grid.to_reduced(state.trE)
    nu = sum(s[2] for s in w.singular) if w is not None else p.nu
    load = np.zeros(grid.n_nodes)
    load[0] = 4 * np.pi * nu / ops.mass[0]
    res_z = p.kappa * (L @ (L @ (rz - rz0))) - ops.bracket(chi, rz)
    pref, _ = trE_prefactors(p)
    res_tr = pref * (L @ tre) + ops.bracket(rz, rz) - ops.bracket(rz0, rz0) - load
    return grid.to_full(res_z), grid.to_full(res_tr)


def max_normal_deviation(grid: Grid, rz):
    """``max |N - (0, 0, 1)|`` for the graph ``z = Rz`` over the disk."""
    m = MetricField.euclidean(grid)
    dz_r = grid.d(rz, "u")
    dz_t = grid.d(rz, "v")
    g_inv = m.g_inv
    grad2 = g_inv[..., 0, 0] * dz_r**2 + g_inv[..., 1, 1] * dz_t**2
    nz = 1 / np.sqrt(1 + grad2)
    # |N - e_z|^2 = |grad|^2 nz^2 + (1 - nz)^2
    return float(np.sqrt(grad2 * nz**2 + (1 - nz) ** 2).max())


def solve_single_disclination(prob: SurfaceProblem, bc=None, *, seed=None, tol=1e-9, max_iter=60,
                              validity_threshold=0.2) -> CovariantState:
    """Newton solve of the covariant single-disclination system.

    The bending operator acts on ``U = Rz - Rz0`` so that the reference is
    stress- and moment-free without a defect.  ``bc`` follows
    :func:`surfgauge.vonkarman.solve_von_karman`.  A
    :class:`LinearizationWarning` is issued when the deformed normal departs
    from the apex normal by more than ``validity_threshold``; the state is
    returned regardless.
    """
    from .vonkarman import _check_bc

    bc = _check_bc(bc)
    grid, p = prob.grid, prob.params
    z0_ext = _extend(prob.z0)
    ext = Grid.disk(grid.u_range[1] + grid.h_u, grid.n_u + 1, grid.n_v)
    metric = _monge_metric(ext, z0_ext)
    plate = PlateSystem(metric, kappa=p.kappa, k0=p.k0, source_nodes=[0] if p.nu else [],
                        source_total=2 * np.pi * p.nu, z0=z0_ext, bc_f=bc["f"])
    x0 = plate.initial(None if seed is None else _extend(np.asarray(seed, float)))
    x, it, history, ok = plate.solve(x0, tol=tol, max_iter=max_iter)
    if not ok:
        raise SolverError("covariant Newton iteration did not converge", history[-1], it)
    res = plate.result(x, it, history, ok)
    rz = prob.z0 + res.f
    dev = max_normal_deviation(grid, rz)
    valid = dev <= validity_threshold
    if not valid:
        warnings.warn(f"max |dN| = {dev:.3f} exceeds {validity_threshold}; linearization is "
                      "outside its range", LinearizationWarning, stacklevel=2)
    tre = res.lap_chi / (p.lam + p.mu)
    return CovariantState(grid, rz, tre, res.chi, prob.z0.copy(), it,
                          max(res.residual_bending, res.residual_compat), dev, valid,
                          res.bending_energy, res.stretching_energy)
