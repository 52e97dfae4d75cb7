"""Newton solver for the coupled plate system on a disk grid.

Unknowns are the height displacement ``f`` (measured from a reference
height ``z0``), the Airy function ``chi`` and their Laplacians ``p``, ``q``
on a disk grid extended by one ghost ring::

    p - L f = 0
    kappa L p - [chi, z0 + f] - pressure = 0
    q - L chi = 0
    L q / K0 + [z0, f] + [f, f] / 2 - source = 0

with ``L`` the conservative covariant Laplacian and ``[.,.]`` the covariant
Monge-Ampere bracket.  Edge conditions at the last physical ring use the
ghost ring: ``chi = d_r chi = 0`` (traction free) and either
``Lf = d_r Lf = 0`` (free edge) or ``f = d_r f = 0`` (clamped edge).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import MetricField, SolverError
from .grid import Grid

log = logging.getLogger(__name__)


def extended_disk(radius, n_r, n_theta):
    """Disk grid of ``n_r`` physical rings plus one ghost ring beyond ``radius``."""
    h = radius / (n_r - 1)
    return Grid.disk(radius + h, n_r + 1, n_theta)


def physical_grid(ext: Grid):
    return Grid.disk(ext.u_range[1] - ext.h_u, ext.n_u - 1, ext.n_v)


@dataclass
class PlateResult:
    f: np.ndarray
    chi: np.ndarray
    lap_f: np.ndarray
    lap_chi: np.ndarray
    iterations: int
    residual_bending: float
    residual_compat: float
    bending_energy: float
    stretching_energy: float
    converged: bool
    history: list = field(default_factory=list)

    @property
    def energy(self):
        return self.bending_energy + self.stretching_energy


class PlateSystem:
    def __init__(self, metric: MetricField, *, kappa, k0, source_nodes=(), source_total=0.0,
                 z0=None, pressure=None, bc_f="free"):
        self.metric = metric
        self.grid = grid = metric.grid
        if not grid.is_polar:
            raise ValueError("the plate solver runs on disk-polar grids")
        if bc_f not in ("free", "clamped"):
            raise ValueError(f"unknown height boundary condition {bc_f!r}")
        self.ops = ops = metric.operators
        self.kappa, self.k0, self.bc_f = float(kappa), float(k0), bc_f
        n = self.n = grid.n_nodes
        nt = grid.n_v
        self.n_phys = n - nt
        self.edge = np.arange(self.n_phys - nt, self.n_phys)
        self.ghost = np.arange(self.n_phys, n)
        self.inner = self.edge - nt
        self.z0 = np.zeros(n) if z0 is None else grid.to_reduced(z0)
        self.source = np.zeros(n)
        for k in source_nodes:
            self.source[k] += source_total / len(source_nodes) / ops.mass[k]
        self.pressure = np.zeros(n) if pressure is None else grid.to_reduced(pressure)
        self.L = ops.laplacian
        self._jz0 = ops.bracket_jacobian(self.z0)
        self.n_constraints = 3 if bc_f == "free" else 0
        self._constraints = self._rigid_constraints()
        w = ops.mass[: self.n_phys].copy()
        w[-nt:] *= 0.5  # edge ring owns half a control volume
        self.phys_mass = w

    def _rigid_constraints(self):
        # pin the apex height and the ring-1 tilt (null modes of the free plate)
        if not self.n_constraints:
            return sp.csr_matrix((0, 4 * self.n + 0))
        nt = self.grid.n_v
        theta = self.grid.v
        c = sp.lil_matrix((3, 4 * self.n))
        c[0, 0] = 1.0
        c[1, 1:1 + nt] = np.cos(theta)
        c[2, 1:1 + nt] = np.sin(theta)
        return c.tocsr()

    def split(self, x):
        n = self.n
        return x[:n], x[n:2 * n], x[2 * n:3 * n], x[3 * n:4 * n], x[4 * n:]

    def residual(self, x):
        f, p, chi, q, lam = self.split(x)
        ops, L, P = self.ops, self.L, self.n_phys
        r1 = p - L @ f
        r2 = self.kappa * (L @ p) - ops.bracket(chi, self.z0 + f) - self.pressure
        r3 = q - L @ chi
        r4 = (L @ q) / self.k0 + self._jz0 @ f + 0.5 * ops.bracket(f, f) - self.source
        if self.n_constraints:
            r2 = r2 + self._lagrange_rows() @ lam
        e, g, i = self.edge, self.ghost, self.inner
        bc = [chi[e], chi[g] - chi[i]]
        bc += [p[e], p[g] - p[i]] if self.bc_f == "free" else [f[e], f[g] - f[i]]
        parts = [r1[:P], r2[:P], r3[:P], r4[:P]] + bc
        if self.n_constraints:
            parts.append(self._constraints @ x[: 4 * self.n])
        return np.concatenate(parts)

    def _lagrange_rows(self):
        return self._constraints[:, : self.n].T.tocsr()

    def jacobian(self, x):
        f, p, chi, q, _ = self.split(x)
        n, P, ops, L = self.n, self.n_phys, self.ops, self.L
        eye = sp.identity(n, format="csr")
        zero = sp.csr_matrix((n, n))
        j_chi = ops.bracket_jacobian(self.z0 + f)      # d[chi, z0+f]/dchi
        j_f = ops.bracket_jacobian(chi)                # d[chi, z0+f]/df
        j_ff = ops.bracket_jacobian(f)                 # d([f,f]/2)/df
        blocks = [
            [-L, eye, zero, zero],
            [-j_f, self.kappa * L, -j_chi, zero],
            [zero, zero, -L, eye],
            [self._jz0 + j_ff, zero, zero, L / self.k0],
        ]
        rows = [sp.hstack(b, format="csr")[:P] for b in blocks]
        nt = self.grid.n_v
        sel = lambda idx, block: sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx + block * n)),
                                               shape=(len(idx), 4 * n))
        e, g, i = self.edge, self.ghost, self.inner
        bc = [sel(e, 2), sel(g, 2) - sel(i, 2)]
        blk = 1 if self.bc_f == "free" else 0
        bc += [sel(e, blk), sel(g, blk) - sel(i, blk)]
        main = sp.vstack(rows + bc, format="csr")
        if not self.n_constraints:
            return main
        main = sp.hstack([main, self._lag_columns(P, nt)], format="csr")
        cons = sp.hstack([self._constraints, sp.csr_matrix((3, 3))], format="csr")
        return sp.vstack([main, cons], format="csr")

    def _lag_columns(self, P, nt):
        # Lagrange multipliers enter the bending rows (second block of P rows)
        total_rows = 4 * P + 4 * nt
        lag = self._lagrange_rows()[:P].tocoo()
        return sp.csr_matrix((lag.data, (lag.row + P, lag.col)), shape=(total_rows, 3))

    def initial(self, f0=None):
        x = np.zeros(4 * self.n + self.n_constraints)
        if f0 is not None:
            f = self.grid.to_reduced(f0)
            x[: self.n] = f
            x[self.n:2 * self.n] = self.L @ f
        return x

    def relax_stress(self, x):
        """Solve the linear Airy subsystem for the height stored in ``x``."""
        n, P, L, nt = self.n, self.n_phys, self.L, self.grid.n_v
        f = x[:n]
        rhs4 = self.source - self._jz0 @ f - 0.5 * self.ops.bracket(f, f)
        eye = sp.identity(n, format="csr")
        top = sp.hstack([-L, eye], format="csr")[:P]
        bot = sp.hstack([sp.csr_matrix((n, n)), L / self.k0], format="csr")[:P]
        e, g, i = self.edge, self.ghost, self.inner
        pick = lambda idx: sp.csr_matrix((np.ones(nt), (np.arange(nt), idx)), shape=(nt, 2 * n))
        a = sp.vstack([top, bot, pick(e), pick(g) - pick(i)], format="csc")
        b = np.concatenate([np.zeros(P), rhs4[:P], np.zeros(2 * nt)])
        sol = spla.spsolve(a, b)
        out = x.copy()
        out[2 * n:4 * n] = sol
        return out

    def residual_norms(self, r):
        P = self.n_phys
        return float(np.abs(r[P:2 * P]).max()), float(np.abs(r[3 * P:4 * P]).max())

    def merit(self, r):
        # bring both force balances to the units of a curvature
        P = self.n_phys
        scaled = np.concatenate([r[:P], r[P:2 * P] / self.kappa, r[2 * P:3 * P],
                                 r[3 * P:4 * P] * self.k0, r[4 * P:]])
        return float(np.linalg.norm(scaled))

    def solve(self, x0, *, tol=1e-8, max_iter=60):
        x = self.relax_stress(x0)
        r = self.residual(x)
        history = [self.merit(r)]
        it = 0
        for it in range(1, max_iter + 1):
            jac = self.jacobian(x)
            try:
                dx = spla.spsolve(jac.tocsc(), -r)
            except RuntimeError as exc:  # singular factorization
                raise SolverError(f"linear solve failed: {exc}", history[-1], it) from exc
            if not np.all(np.isfinite(dx)):
                raise SolverError("Newton step is not finite", history[-1], it)
            step = 1.0
            while True:
                x_new = x + step * dx
                r_new = self.residual(x_new)
                m_new = self.merit(r_new)
                if m_new < (1 - 1e-4 * step) * history[-1] or step < 1e-3:
                    break
                step *= 0.5
            x, r = x_new, r_new
            history.append(m_new)
            log.debug("newton %d step %.3g merit %.3e", it, step, m_new)
            rel = np.linalg.norm(step * dx) / max(np.linalg.norm(x), 1e-300)
            if m_new <= tol or rel <= tol:
                return x, it, history, True
        return x, it, history, False

    def result(self, x, iterations, history, converged):
        f, p, chi, q, _ = self.split(x)
        r = self.residual(x)
        res_b, res_c = self.residual_norms(r)
        P = self.n_phys
        bend = 0.5 * self.kappa * float(self.phys_mass @ (p[:P] ** 2))
        stretch = 0.5 / self.k0 * float(self.phys_mass @ (q[:P] ** 2))
        phys = physical_grid(self.grid)
        cut = lambda v: phys.to_full(v[:P])
        return PlateResult(cut(f), cut(chi), cut(p), cut(q), iterations, res_b, res_c,
                           bend, stretch, converged, history)
