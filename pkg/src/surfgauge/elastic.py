"""Gauged elasticity: strain, stress, stress vectors and elastic energy.

Energies are the negatives of the corresponding action terms, so they are
bounded below for stable moduli.  The strain is the metric difference
``E_ab = nabla_a R . nabla_b R - g_ab``, i.e. twice the usual
small-strain tensor.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .gauge import GaugeField, gauge_covariant_derivative
from .geometry import LEVI_CIVITA_2D, MetricField
from .grid import Embedding, Grid


@dataclass(frozen=True)
class MaterialParams:
    lam: float = 1.0
    mu: float = 1.0
    kappa: float = 1.0
    kappa_g: float = 0.0
    s: float = 1.0
    nu: float = 1.0 / 6.0

    def __post_init__(self):
        if self.mu <= 0 or self.lam + self.mu <= 0:
            raise ValueError("unstable Lame coefficients: need mu > 0 and lambda + mu > 0")
        if self.kappa < 0:
            raise ValueError("bending rigidity must be non-negative")
        if self.s <= 0:
            raise ValueError("gauge coupling s must be positive")

    # config files spell the Lame coefficient 'lambda'
    _ALIASES = {"lambda": "lam", "kappa_G": "kappa_g"}

    @classmethod
    def from_mapping(cls, data):
        kwargs = {}
        for key, value in data.items():
            kwargs[cls._ALIASES.get(key, key)] = float(value)
        return cls(**kwargs)

    def to_mapping(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def replace(self, **changes):
        d = asdict(self)
        for k, v in changes.items():
            d[self._ALIASES.get(k, k)] = v
        return MaterialParams(**d)

    @property
    def k0(self):
        return k0(self)

    @property
    def poisson_ratio(self):
        return self.lam / (self.lam + 2 * self.mu)


@dataclass(frozen=True)
class StrainField:
    grid: Grid
    E: np.ndarray


@dataclass(frozen=True)
class StressField:
    grid: Grid
    rho: np.ndarray


@dataclass(frozen=True)
class StressVectors:
    grid: Grid
    sigma: np.ndarray  # [..., b, i]


def _sym(t):
    return 0.5 * (t + np.swapaxes(t, -1, -2))


def strain_tensor(g_ref: MetricField, e: Embedding, w: GaugeField) -> StrainField:
    nab = gauge_covariant_derivative(w, e)
    deformed = np.einsum("...ai,...bi->...ab", nab, nab)
    return StrainField(e.grid, _sym(deformed - g_ref.g))


def linearized_membrane_strain(u, f, w: GaugeField, e0: Embedding) -> StrainField:
    """Small-displacement strain of a flat membrane in Cartesian coordinates.

    ``u`` is the in-plane displacement ``(n_u, n_v, 2)`` and ``f`` the height.
    Terms of order ``u^2``, ``u df`` and ``W^2`` are dropped.
    """
    grid = e0.grid
    u = np.asarray(u, dtype=float)
    du = np.stack([grid.d(u, "u"), grid.d(u, "v")], axis=-2)  # [..., a, b] = d_a u_b
    df = np.stack([grid.d(f, "u"), grid.d(f, "v")], axis=-1)
    wz = w.W[..., 2]
    rot = np.einsum("ka,...k->...a", LEVI_CIVITA_2D, e0.positions[..., :2])  # eps_{alpha a} R^alpha
    E = (du + np.swapaxes(du, -1, -2) + df[..., :, None] * df[..., None, :]
         + rot[..., :, None] * wz[..., None, :] + wz[..., :, None] * rot[..., None, :])
    return StrainField(grid, E)


def stress_density(E: StrainField, m: MetricField, p: MaterialParams) -> StressField:
    """``rho^ab = lambda g^ab trE + 2 mu E^ab``."""
    tr = m.trace(E.E)
    rho = p.lam * m.g_inv * tr[..., None, None] + 2 * p.mu * m.raise_both(E.E)
    return StressField(E.grid, rho)


def stress_vectors(e: Embedding, w: GaugeField, rho: StressField) -> StressVectors:
    """``sigma^b = 1/2 (nabla_a R) rho^ab``."""
    nab = gauge_covariant_derivative(w, e)
    return StressVectors(e.grid, 0.5 * np.einsum("...ai,...ab->...bi", nab, rho.rho))


def elastic_energy_density(E, m: MetricField, p: MaterialParams):
    mixed = np.einsum("...ac,...cb->...ab", m.g_inv, E)
    tr = np.trace(mixed, axis1=-2, axis2=-1)
    tr_sq = np.einsum("...ab,...ba->...", mixed, mixed)
    return 0.125 * (p.lam * tr**2 + 2 * p.mu * tr_sq)


def elastic_energy(E: StrainField, m: MetricField, p: MaterialParams) -> float:
    """``(1/8) int sqrt(g) [lambda (trE)^2 + 2 mu tr(E^2)]``."""
    return m.integrate(elastic_energy_density(E.E, m, p))


def k0(p) -> float:
    """Two-dimensional Young modulus ``4 mu (lambda + mu) / (lambda + 2 mu)``.

    Accepts :class:`MaterialParams` or a ``(lambda, mu)`` pair.
    """
    lam, mu = (p.lam, p.mu) if isinstance(p, MaterialParams) else p
    denom = lam + 2 * mu
    if denom == 0:
        raise ZeroDivisionError("K0 undefined for lambda + 2 mu = 0")
    return 4 * mu * (lam + mu) / denom
