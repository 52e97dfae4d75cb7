"""Flat-membrane von Karman equations with a disclination source.

In the small-slope limit the height ``f`` and the Airy stress function
``chi`` of a flat membrane obey::

    kappa Lap^2 f = [chi, f]
    Lap^2 chi / K0 = -[f, f] / 2 + 2 pi nu delta

with the Monge-Ampere bracket ``[g, f] = g_xx f_yy + g_yy f_xx - 2 g_xy f_xy``.
The stresses are ``sigma_xx = chi_yy``, ``sigma_yy = chi_xx`` and
``sigma_xy = -chi_xy``; the gauge vortex only enters through the point
source.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._plate import PlateSystem, extended_disk
from .elastic import MaterialParams
from .gauge import DisclinationSpec
from .geometry import MetricField, SolverError
from .grid import Grid, GridError

log = logging.getLogger(__name__)

BOUNDARY_CONDITIONS = {"f": ("free", "clamped"), "chi": ("free-stress",)}


@dataclass
class MembraneState:
    """Height and Airy fields of a flat membrane on ``grid``."""

    grid: Grid
    f: np.ndarray
    chi: np.ndarray
    iterations: int = 0
    residual: float = float("nan")
    bending_energy: float = float("nan")
    stretching_energy: float = float("nan")
    branch: str = ""
    converged: bool = True

    @property
    def energy(self):
        return self.bending_energy + self.stretching_energy


@dataclass(frozen=True)
class VkSource:
    defects: tuple = ()
    pressure: np.ndarray | None = None

    def __post_init__(self):
        defects = tuple(self.defects)
        centers = [tuple(d.center) for d in defects]
        if len(set(centers)) != len(centers):
            raise ValueError("defect centres must be distinct")
        object.__setattr__(self, "defects", defects)

    @classmethod
    def single(cls, nu, center=(0.0, 0.0)):
        return cls((DisclinationSpec(center, nu),))


# -- residuals -----------------------------------------------------------


def _cartesian_ops(grid):
    lap = grid.operator("uu") + grid.operator("vv")

    def bracket(g, f):
        d = grid.d
        return d(g, "uu") * d(f, "vv") + d(g, "vv") * d(f, "uu") - 2 * d(g, "uv") * d(f, "uv")

    return lap, bracket


def delta_load(src: VkSource, grid: Grid):
    """Nodal density whose quadrature gives ``2 pi nu`` per defect."""
    if grid.is_polar:
        m = MetricField.euclidean(grid)
        load = np.zeros(grid.n_nodes)
        mass = m.operators.mass
        for d in src.defects:
            x, y = d.center
            k = grid.reduced_index(*grid.nearest_node(np.hypot(x, y), np.arctan2(y, x) % (2 * np.pi)))
            load[k] += 2 * np.pi * d.frank_index / mass[k]
        return grid.to_full(load)
    load = np.zeros(grid.shape)
    weights = grid.quadrature_weights()
    for d in src.defects:
        i, j = grid.nearest_node(*d.center)
        load[i, j] += 2 * np.pi * d.frank_index / weights[i, j]
    return load


def von_karman_residual(st: MembraneState, src: VkSource, p: MaterialParams):
    """Nodal residuals ``(res1, res2)`` of the two von Karman equations.

    ``res1 = kappa Lap^2 f - [chi, f] - pressure`` and
    ``res2 = Lap^2 chi / K0 + [f, f] / 2 - 2 pi nu delta``.
    """
    grid = st.grid
    f, chi = np.asarray(st.f, float), np.asarray(st.chi, float)
    pressure = np.zeros(grid.shape) if src.pressure is None else np.asarray(src.pressure, float)
    load = delta_load(src, grid)
    if grid.is_polar:
        ops = MetricField.euclidean(grid).operators
        fr, cr = grid.to_reduced(f), grid.to_reduced(chi)
        L = ops.laplacian
        res1 = p.kappa * (L @ (L @ fr)) - ops.bracket(cr, fr) - grid.to_reduced(pressure)
        res2 = (L @ (L @ cr)) / p.k0 + 0.5 * ops.bracket(fr, fr) - grid.to_reduced(load)
        return grid.to_full(res1), grid.to_full(res2)
    if grid.topology != "open":
        raise GridError("von Karman residuals need an open Cartesian or a disk-polar grid")
    lap, bracket = _cartesian_ops(grid)
    bih = lambda a: grid.apply(lap, grid.apply(lap, a))
    res1 = p.kappa * bih(f) - bracket(chi, f) - pressure
    res2 = bih(chi) / p.k0 + 0.5 * bracket(f, f) - load
    return res1, res2


def equilibrium_check(st: MembraneState, p: MaterialParams):
    """Normal force balance ``kappa Lap^2 f - d_a d_b f sigma^ab`` with Airy stresses."""
    grid = st.grid
    if grid.topology != "open":
        raise GridError("equilibrium_check works on open Cartesian grids")
    d = grid.d
    lap = grid.operator("uu") + grid.operator("vv")
    f, chi = st.f, st.chi
    s_xx, s_yy, s_xy = d(chi, "vv"), d(chi, "uu"), -d(chi, "uv")
    contraction = d(f, "uu") * s_xx + d(f, "vv") * s_yy + 2 * d(f, "uv") * s_xy
    return p.kappa * grid.apply(lap, grid.apply(lap, f)) - contraction


# -- solver ----------------------------------------------------------------


def _check_bc(bc):
    bc = {"f": "free", "chi": "free-stress", **(bc or {})}
    for key, allowed in BOUNDARY_CONDITIONS.items():
        if bc[key] not in allowed:
            raise ValueError(f"boundary condition {key}={bc[key]!r} not in {allowed}")
    return bc


def _plate_for(src, p, grid, bc, z0=None):
    if not grid.is_polar:
        raise GridError("solve_von_karman runs on disk-polar grids")
    if len(src.defects) > 1:
        raise ValueError("the disk solver handles at most one defect")
    if src.defects and np.hypot(*src.defects[0].center) > 1e-12:
        raise ValueError("the defect must sit at the disk centre")
    ext = extended_disk(grid.u_range[1], grid.n_u, grid.n_v)
    metric = MetricField.euclidean(ext)
    nu = src.defects[0].frank_index if src.defects else 0.0
    pressure = None
    if src.pressure is not None:
        pressure = np.vstack([src.pressure, src.pressure[-1:]])
    return PlateSystem(metric, kappa=p.kappa, k0=p.k0, source_nodes=[0] if nu else [],
                       source_total=2 * np.pi * nu, z0=z0, pressure=pressure, bc_f=bc["f"])


def solve_von_karman(src: VkSource, p: MaterialParams, grid: Grid, bc=None, *,
                     seed=None, tol=1e-9, max_iter=60, branch="") -> MembraneState:
    """Damped Newton solve of the von Karman system on a disk.

    Parameters
    ----------
    src : VkSource
        At most one defect, at the disk centre.
    grid : Grid
        ``disk-polar`` grid of the physical disk.
    bc : dict, optional
        ``{"f": "free" | "clamped", "chi": "free-stress"}``.
    seed : ndarray, optional
        Initial height field on ``grid``; the flat state by default.

    Raises
    ------
    SolverError
        If Newton does not reach ``tol`` within ``max_iter`` steps.
    """
    bc = _check_bc(bc)
    plate = _plate_for(src, p, grid, bc)
    x0 = plate.initial(None if seed is None else np.vstack([seed, seed[-1:]]))
    x, it, history, ok = plate.solve(x0, tol=tol, max_iter=max_iter)
    res = plate.result(x, it, history, ok)
    if not ok:
        raise SolverError("von Karman Newton iteration did not converge", history[-1], it)
    log.info("von Karman solve: %d iterations, residuals %.2e / %.2e", it,
             res.residual_bending, res.residual_compat)
    return MembraneState(grid, res.f, res.chi, it, max(res.residual_bending, res.residual_compat),
                         res.bending_energy, res.stretching_energy, branch, ok)


# -- axisymmetric reference ----------------------------------------------------


@dataclass(frozen=True)
class RadialReference:
    r: np.ndarray
    chi: np.ndarray
    sigma_rr: np.ndarray
    sigma_tt: np.ndarray
    energy: float


def flat_disclination_reference(nu, K0, R, bc="free-stress", *, poisson_ratio=None, n=401):
    """Axisymmetric flat solution of ``Lap^2 chi / K0 = 2 pi nu delta`` on a disk.

    The radial reduction has the general regular solution
    ``chi = (K0 nu / 4) r^2 ln r + B r^2 + C``.  ``bc='free-stress'`` sets
    ``sigma_rr(R) = 0``; ``bc='clamped'`` sets the radial displacement
    ``u_r(R) = 0`` and needs the Poisson ratio.  ``C`` is fixed by
    ``chi(R) = 0``.  The energy is the plane-stress elastic energy,
    integrated by adaptive quadrature.
    """
    a = K0 * nu / 4
    if bc == "free-stress":
        two_b = -a * (2 * np.log(R) + 1)
        vp = 0.0 if poisson_ratio is None else poisson_ratio
    elif bc == "clamped":
        if poisson_ratio is None:
            raise ValueError("clamped reference needs the Poisson ratio")
        vp = poisson_ratio
        two_b = -a * (2 * np.log(R) + (3 - vp) / (1 - vp))
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    b = two_b / 2

    def radial(r):
        r = np.asarray(r, float)
        lnr = np.log(np.where(r > 0, r, 1.0))
        chi = a * r**2 * lnr + b * r**2
        s_rr = a * (2 * lnr + 1) + two_b
        s_tt = a * (2 * lnr + 3) + two_b
        return chi, s_rr, s_tt

    def density(r):
        _, s_rr, s_tt = radial(r)
        w = ((s_rr + s_tt) ** 2 - 2 * (1 + vp) * s_rr * s_tt) / (2 * K0)
        return w * 2 * np.pi * r

    r = np.linspace(0.0, R, n)
    chi, s_rr, s_tt = radial(r)
    chi = chi - radial(R)[0]
    energy = integrate.quad(density, 0.0, R, limit=200)[0] if nu else 0.0
    s_rr[0] = s_tt[0] = -np.inf * np.sign(nu) if nu else 0.0
    return RadialReference(r, chi, s_rr, s_tt, float(energy))


# -- buckling --------------------------------------------------------------------


def azimuthal_power(f_ring):
    """Fraction of Fourier power per azimuthal mode of a ring of samples."""
    spec = np.abs(np.fft.rfft(np.asarray(f_ring, float))) ** 2
    spec[1:] *= 2
    total = spec.sum()
    return spec / total if total > 0 else spec


def classify_shape(st: MembraneState, *, flat_tol=1e-6):
    """``'cone'``, ``'saddle'``, ``'flat'`` or ``'other'`` from the outer-ring spectrum."""
    ring = st.f[-1] - st.f[0, 0]
    if np.abs(ring).max() <= flat_tol * st.grid.u_range[1]:
        return "flat"
    power = azimuthal_power(ring)
    if power[0] > 0.9:
        return "cone"
    if len(power) > 2 and np.argmax(power) == 2:
        return "saddle"
    return "other"


def fit_cone_slope(st: MembraneState, r_range=(0.2, 0.6)):
    """Least-squares slope of the ring-averaged height over ``r_range`` (fractions of R)."""
    r = st.grid.u
    R = st.grid.u_range[1]
    sel = (r >= r_range[0] * R) & (r <= r_range[1] * R)
    prof = st.f.mean(axis=1) - st.f[0, 0]
    return float(abs(np.polyfit(r[sel], prof[sel], 1)[0]))


@dataclass
class BucklingReport:
    nu_abs: float
    e_flat_pos: float
    e_buckled_pos: float
    e_flat_neg: float
    e_buckled_neg: float
    shape_pos: str
    shape_neg: str
    power_pos: np.ndarray
    power_neg: np.ndarray
    branches: list = field(default_factory=list)
    states: dict = field(default_factory=dict)

    @property
    def margin(self):
        """``E_buckled(-) - E_buckled(+)``; positive when the cone wins."""
        return self.e_buckled_neg - self.e_buckled_pos

    def to_mapping(self):
        return {
            "nu_abs": self.nu_abs,
            "E_flat(+)": self.e_flat_pos, "E_buckled(+)": self.e_buckled_pos,
            "E_flat(-)": self.e_flat_neg, "E_buckled(-)": self.e_buckled_neg,
            "shape(+)": self.shape_pos, "shape(-)": self.shape_neg,
            "m0_power(+)": float(self.power_pos[0]),
            "m2_power(-)": float(self.power_neg[2]) if len(self.power_neg) > 2 else 0.0,
            "margin": self.margin,
            "branches": self.branches,
        }


def _seeds(grid, nu):
    r, th = grid.mesh
    # inextensional amplitudes: both shapes carry integrated Gaussian curvature 2 pi |nu|
    cone = np.sqrt(2 * abs(nu)) * r
    saddle = np.sqrt(4 * abs(nu) / 3) * r * np.cos(2 * th)
    return {"flat": None, "cone": cone, "saddle": saddle}


def buckling_comparison(nu_abs, p: MaterialParams, grid: Grid, *, bc=None, tol=1e-9,
                        max_iter=80, seed_scale=1.0, noise=0.0, rng=None) -> BucklingReport:
    """Solve the flat, cone-seeded and saddle-seeded branches for ``nu = +-|nu|``.

    Every converged branch is recorded; the buckled energy of each sign is
    the lowest non-flat branch and the shape label is that of the overall
    minimiser.  ``noise`` adds Gaussian perturbations of that amplitude,
    drawn from ``rng`` (a ``numpy.random.Generator`` or seed), to the
    buckled seeds.
    """
    rng = np.random.default_rng(rng)
    out = {}
    branches = []
    states = {}
    for sign, tag in ((1, "pos"), (-1, "neg")):
        nu = sign * abs(nu_abs)
        src = VkSource.single(nu)
        found = {}
        for name, seed in _seeds(grid, nu).items():
            if seed is not None:
                seed = seed_scale * seed
                if noise:
                    seed = seed + noise * rng.standard_normal(seed.shape)
                    seed[0] = seed[0].mean()  # the apex is a single node
            try:
                st = solve_von_karman(src, p, grid, bc, seed=seed, tol=tol, max_iter=max_iter, branch=name)
            except SolverError as exc:
                branches.append({"nu": nu, "seed": name, "converged": False, "residual": exc.residual})
                continue
            shape = classify_shape(st)
            branches.append({"nu": nu, "seed": name, "converged": True, "energy": st.energy,
                             "shape": shape, "iterations": st.iterations})
            found[name] = (st, shape)
        if "flat" not in found:
            raise SolverError(f"flat branch failed for nu={nu}", float("nan"), max_iter)
        flat = found["flat"][0]
        buckled = [(s, sh) for s, sh in found.values() if sh != "flat"]
        best_b = min(buckled, key=lambda t: t[0].energy) if buckled else (flat, "flat")
        best = min([found["flat"], best_b], key=lambda t: t[0].energy)
        states[tag] = best_b[0]
        out[tag] = (flat.energy, best_b[0].energy, best[1], azimuthal_power(best[0].f[-1]))
    return BucklingReport(abs(nu_abs), out["pos"][0], out["pos"][1], out["neg"][0], out["neg"][1],
                          out["pos"][2], out["neg"][2], out["pos"][3], out["neg"][3], branches, states)
