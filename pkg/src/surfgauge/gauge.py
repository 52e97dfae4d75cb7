"""SO(3) gauge fields on surfaces.

The so(3) action on R^3 is realized as the cross product, ``[W, R] = W x R``.
A gauge field stores its two R^3-valued components ``W[..., a, :]`` in the
coordinate basis of the grid.  Vortex centres are kept in an explicit
registry because their pointwise potentials diverge; the stored value at a
registered node is zero and energy quadratures skip a core disk around it.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import LEVI_CIVITA_2D, MetricField, covariant_green_function
from .grid import Embedding, Grid, GridError


class UnboundedEnergyWarning(RuntimeWarning):
    pass


class NonAbelianFieldError(ValueError):
    pass


@dataclass(frozen=True)
class DisclinationSpec:
    center: tuple = (0.0, 0.0)
    frank_index: float = 1.0 / 6.0

    def __post_init__(self):
        if self.frank_index == 0:
            raise ValueError("a disclination needs a nonzero Frank index")


@dataclass(frozen=True)
class GaugeField:
    grid: Grid
    W: np.ndarray
    singular: tuple = ()
    role: str = "dynamical"

    def __post_init__(self):
        w = np.asarray(self.W, dtype=float)
        if w.shape != self.grid.shape + (2, 3):
            raise GridError(f"gauge field must have shape {self.grid.shape + (2, 3)}, got {w.shape}")
        if self.role not in ("dynamical", "reference"):
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "singular", tuple(tuple(s) for s in self.singular))

    @classmethod
    def zeros(cls, grid, role="dynamical"):
        return cls(grid, np.zeros(grid.shape + (2, 3)), role=role)

    @classmethod
    def abelian(cls, grid, w1, w2, singular=(), role="dynamical"):
        """Field ``W_a = (0, 0, w_a)`` rotating about the z axis."""
        w = np.zeros(grid.shape + (2, 3))
        w[..., 0, 2] = w1
        w[..., 1, 2] = w2
        return cls(grid, w, singular, role)

    def is_abelian(self, tol=0.0):
        return bool(np.all(np.abs(self.W[..., :2]) <= tol))

    def scaled(self, factor):
        sing = tuple((i, j, nu * factor) for i, j, nu in self.singular)
        return GaugeField(self.grid, self.W * factor, sing, self.role)

    def as_reference(self):
        return GaugeField(self.grid, self.W, self.singular, "reference")


@dataclass(frozen=True)
class FieldStrength:
    grid: Grid
    F12: np.ndarray

    def component(self, a, b):
        if a == b:
            return np.zeros_like(self.F12)
        return self.F12 if (a, b) == (0, 1) else -self.F12


def algebra_action(w, r):
    """Adjoint action of ``w . L`` on an R^3 vector: ``w x r``."""
    return np.cross(w, r)


def gauge_covariant_derivative(w: GaugeField, e: Embedding):
    """``nabla_a R = d_a R + W_a x R``, shape ``(n_u, n_v, 2, 3)``."""
    ru, rv = e.tangents()
    r = e.positions
    return np.stack([ru + np.cross(w.W[..., 0, :], r), rv + np.cross(w.W[..., 1, :], r)], axis=-2)


def field_strength(w: GaugeField) -> FieldStrength:
    g = w.grid
    w1, w2 = w.W[..., 0, :], w.W[..., 1, :]
    return FieldStrength(g, g.d(w2, "u") - g.d(w1, "v") + np.cross(w1, w2))


def core_mask(grid: Grid, singular, core_radius):
    """Nodes within ``core_radius`` (physical, flat-map distance) of a singular node."""
    mask = np.zeros(grid.shape, dtype=bool)
    if not singular or core_radius <= 0:
        return mask
    x, y = grid.planar_coordinates
    for i, j, *_ in singular:
        mask |= np.hypot(x - x[i, j], y - y[i, j]) < core_radius
    return mask


def yang_mills_energy(f: FieldStrength, m: MetricField, s: float, *, singular=(), core_radius=None):
    """``(s/4) int sqrt(g) F^ab . F_ab``, skipping declared vortex cores.

    For an antisymmetric two-form ``F^ab . F_ab = 2 |F_12|^2 / det g``.
    """
    grid = f.grid
    if core_radius is None:
        core_radius = 2 * max(grid.h_u, grid.h_v)
    if singular and core_radius <= 0:
        warnings.warn("singular node inside the quadrature domain without a core cutoff",
                      UnboundedEnergyWarning, stacklevel=2)
    density = 2 * np.einsum("...i,...i->...", f.F12, f.F12) / m.det
    density = np.where(core_mask(grid, singular, core_radius), 0.0, density)
    return 0.25 * s * m.integrate(density)


def _coordinate_frame(grid):
    # d_a X for the grid's flat map, shape (n_u, n_v, 2, 2)
    uu, vv = grid.mesh
    frame = np.zeros(grid.shape + (2, 2))
    if grid.is_polar:
        frame[..., 0, 0], frame[..., 0, 1] = np.cos(vv), np.sin(vv)
        frame[..., 1, 0], frame[..., 1, 1] = -uu * np.sin(vv), uu * np.cos(vv)
    else:
        frame[..., 0, 0] = frame[..., 1, 1] = 1.0
    return frame


def flat_vortex_potential(d: DisclinationSpec, grid: Grid, *, core_radius=None) -> GaugeField:
    """``W_b = -nu eps_bc d_c log r`` about the defect centre (z component only).

    ``d.center`` is a parameter point; on disk grids it must be the apex.
    With ``core_radius`` the potential is smoothed by ``1 - exp(-r^2/rc^2)``.
    """
    nu = d.frank_index
    x, y = grid.planar_coordinates
    if grid.is_polar:
        cx = d.center[0] * np.cos(d.center[1])
        cy = d.center[0] * np.sin(d.center[1])
    else:
        cx, cy = d.center
    dx, dy = x - cx, y - cy
    r2 = dx**2 + dy**2
    tiny = r2 < 1e-24
    safe = np.where(tiny, 1.0, r2)
    cart = np.stack([-nu * dy / safe, nu * dx / safe], axis=-1)
    if core_radius:
        cart *= (1.0 - np.exp(-r2 / core_radius**2))[..., None]
    cart[tiny] = 0.0
    comp = np.einsum("...ak,...k->...a", _coordinate_frame(grid), cart)
    singular = ()
    if tiny.any() and not core_radius:
        i, j = np.argwhere(tiny)[0]
        singular = ((int(i), int(j), nu),)
    return GaugeField.abelian(grid, comp[..., 0], comp[..., 1], singular)


def covariant_vortex_potential(d: DisclinationSpec, m: MetricField, *, source=None,
                               core_radius=None, **green_kwargs) -> GaugeField:
    """``W^b = -nu eps^bc D_c G`` lowered with ``g_ab``.

    ``source`` overrides the node set carrying the unit charge (defaults to
    the node nearest ``d.center``, or the apex on disk grids); remaining
    keyword arguments go to :func:`covariant_green_function`.  With
    ``core_radius`` the potential is smoothed by ``1 - exp(-r^2/rc^2)`` in
    the flat-map distance from the source and no vortex is registered.
    """
    grid = m.grid
    if source is None:
        source = "pole" if grid.is_polar else grid.nearest_node(*d.center)
    G = covariant_green_function(m, source, **green_kwargs)
    dG = np.stack([grid.d(G, "u"), grid.d(G, "v")], axis=-1)
    w_up = -d.frank_index * np.einsum("...bc,...c->...b", m.eps_up, dG)
    w_low = np.einsum("...ab,...b->...a", m.g, w_up)
    if grid.is_polar:
        nodes = [(0, j) for j in range(grid.n_v)] if source == "pole" else []
    elif isinstance(source, tuple) and np.isscalar(source[0]):
        nodes = [source]
    else:
        nodes = list(source)
    if core_radius:
        x, y = grid.planar_coordinates
        cx = np.mean([x[i, j] for i, j in nodes])
        cy = np.mean([y[i, j] for i, j in nodes])
        w_low *= (1.0 - np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / core_radius**2))[..., None]
        for i, j in nodes:
            w_low[i, j] = 0.0
        return GaugeField.abelian(grid, w_low[..., 0], w_low[..., 1])
    for i, j in nodes:
        w_low[i, j] = 0.0
    if grid.is_polar:
        # the apex row is one physical point carrying the whole index
        singular = [(0, 0, d.frank_index)]
    else:
        singular = [(int(i), int(j), d.frank_index / len(nodes)) for i, j in nodes]
    return GaugeField.abelian(grid, w_low[..., 0], w_low[..., 1], singular)


def disclination_density(w: GaugeField, m: MetricField):
    """``eps^ab D_a W_b`` for an abelian (z-only) field."""
    if not w.is_abelian():
        raise NonAbelianFieldError("disclination density is defined for z-only gauge fields")
    g = w.grid
    wz = w.W[..., 2]
    curl = g.d(wz[..., 1], "u") - g.d(wz[..., 0], "v")
    return curl / m.sqrt_g


def loop_flux(w: GaugeField, ring: int):
    """Circulation of the z component around ring ``ring`` of a disk grid."""
    if not w.grid.is_polar:
        raise GridError("loop_flux needs a disk-polar grid")
    return float(np.sum(w.W[ring, :, 1, 2]) * w.grid.h_v)


def reference_metric_with_defects(e0: Embedding, w0: GaugeField) -> MetricField:
    """Reference metric deformed by fixed defect potentials, expanded form.

    ``g_ab = dR.dR + dR_a.(W_b x R) + dR_b.(W_a x R) + (W_a.W_b) R^2 - (W_a.R)(W_b.R)``
    """
    ru, rv = e0.tangents()
    d = np.stack([ru, rv], axis=-2)
    r = e0.positions
    w = w0.W
    cross = np.cross(w, r[..., None, :])
    dot = np.einsum
    g = (dot("...ai,...bi->...ab", d, d)
         + dot("...ai,...bi->...ab", d, cross)
         + dot("...bi,...ai->...ab", d, cross)
         + dot("...ai,...bi->...ab", w, w) * dot("...i,...i->...", r, r)[..., None, None]
         - dot("...ai,...i->...a", w, r)[..., :, None] * dot("...bi,...i->...b", w, r)[..., None, :])
    return MetricField(e0.grid, g)


def planar_reference_metric(e0: Embedding, w0: GaugeField):
    """Closed form for a planar reference with a z-only defect field.

    ``g_ab = delta_ab + eps_{alpha a} W_b R^alpha + eps_{beta b} W_a R^beta + W_a W_b |R|^2``
    in Cartesian coordinates.
    """
    r = e0.positions[..., :2]
    wz = w0.W[..., 2]
    rot = np.einsum("ka,...k->...a", LEVI_CIVITA_2D, r)
    g = (np.eye(2) + rot[..., :, None] * wz[..., None, :] + wz[..., :, None] * rot[..., None, :]
         + wz[..., :, None] * wz[..., None, :] * np.sum(e0.positions**2, axis=-1)[..., None, None])
    return g


def _vee(s):
    return np.stack([s[..., 2, 1], s[..., 0, 2], s[..., 1, 0]], axis=-1)


def _hat(w):
    z = np.zeros(w.shape[:-1])
    return np.stack([np.stack([z, -w[..., 2], w[..., 1]], -1),
                     np.stack([w[..., 2], z, -w[..., 0]], -1),
                     np.stack([-w[..., 1], w[..., 0], z], -1)], -2)


def gauge_transform(w: GaugeField, e: Embedding, omega, d_omega):
    """Transform ``(W, R)`` by an SO(3)-valued map.

    ``omega`` has shape ``(n_u, n_v, 3, 3)`` and ``d_omega`` stacks its two
    parameter derivatives as ``(n_u, n_v, 2, 3, 3)``.  Returns ``(W', R')``
    with ``R' = Omega R`` and ``hat(W'_a) = Omega hat(W_a) Omega^T - (d_a Omega) Omega^T``
    so that ``nabla' R' = Omega nabla R``.
    """
    a = _hat(w.W)
    ot = np.swapaxes(omega, -1, -2)
    a_new = (np.einsum("...ij,...ajk,...kl->...ail", omega, a, ot)
             - np.einsum("...aij,...jk->...aik", d_omega, ot))
    w_new = GaugeField(w.grid, _vee(a_new), w.singular, w.role)
    e_new = e.with_positions(np.einsum("...ij,...j->...i", omega, e.positions))
    return w_new, e_new


def euler_rotation(alpha, beta, gamma, d_alpha, d_beta, d_gamma):
    """``Rz(alpha) Ry(beta) Rx(gamma)`` and its parameter derivatives.

    The ``d_*`` arguments are ``(n_u, n_v, 2)`` arrays of angle derivatives.
    """
    def rz(t):
        c, s = np.cos(t), np.sin(t)
        o, z = np.ones_like(t), np.zeros_like(t)
        return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)

    def ry(t):
        c, s = np.cos(t), np.sin(t)
        o, z = np.ones_like(t), np.zeros_like(t)
        return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)

    def rx(t):
        c, s = np.cos(t), np.sin(t)
        o, z = np.ones_like(t), np.zeros_like(t)
        return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)

    gz, gy, gx = _hat(np.array([0, 0, 1.0])), _hat(np.array([0, 1.0, 0])), _hat(np.array([1.0, 0, 0]))
    a, b, c = rz(alpha), ry(beta), rx(gamma)
    mm = lambda *ms: np.einsum("...ij,...jk,...kl->...il", *ms)
    omega = mm(a, b, c)
    derivs = []
    for k in range(2):
        da = (gz @ a) * d_alpha[..., k, None, None]
        db = (gy @ b) * d_beta[..., k, None, None]
        dc = (gx @ c) * d_gamma[..., k, None, None]
        derivs.append(mm(da, b, c) + mm(a, db, c) + mm(a, b, dc))
    return omega, np.stack(derivs, axis=-3)
