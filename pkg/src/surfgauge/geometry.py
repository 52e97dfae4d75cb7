"""Discrete differential geometry on structured parametric grids.

Induced metrics, Levi-Civita connections, extrinsic curvature, the
conservative covariant Laplacian and covariant Green functions.  Index
conventions: tensor arrays carry their surface indices as trailing axes, so
``g[..., a, b]`` is ``g_ab`` and ``gamma[..., b, a, c]`` is ``Gamma^b_ac``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Embedding, Grid

LEVI_CIVITA_2D = np.array([[0.0, 1.0], [-1.0, 0.0]])


class DegenerateMetricError(ValueError):
    pass


class DegenerateNormalError(ValueError):
    pass


class SolverError(RuntimeError):
    """Linear or nonlinear solve that failed to reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


def _regularize_apex(grid, arr):
    # the r = 0 row of a polar grid is one point; copy the first ring there
    if grid.is_polar:
        arr = arr.copy()
        arr[0] = arr[1]
    return arr


@dataclass(frozen=True)
class MetricField:
    grid: Grid
    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        g = 0.5 * (g + np.swapaxes(g, -1, -2))
        object.__setattr__(self, "g", g)
        reg = _regularize_apex(self.grid, g)
        det = reg[..., 0, 0] * reg[..., 1, 1] - reg[..., 0, 1] ** 2
        bad = (det <= 0) | (reg[..., 0, 0] <= 0) | ~np.isfinite(det)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DegenerateMetricError(f"metric not positive definite at node ({i}, {j})")
        object.__setattr__(self, "_g_reg", reg)

    @classmethod
    def euclidean(cls, grid):
        """Flat metric in the grid's natural coordinates (polar on disks)."""
        g = np.zeros(grid.shape + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = grid.mesh[0] ** 2 if grid.is_polar else 1.0
        return cls(grid, g)

    @cached_property
    def det(self):
        g = self._g_reg
        return g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2

    @cached_property
    def sqrt_g(self):
        return np.sqrt(self.det)

    @cached_property
    def g_inv(self):
        g = self._g_reg
        inv = np.empty_like(g)
        inv[..., 0, 0] = g[..., 1, 1]
        inv[..., 1, 1] = g[..., 0, 0]
        inv[..., 0, 1] = inv[..., 1, 0] = -g[..., 0, 1]
        return inv / self.det[..., None, None]

    @cached_property
    def eps(self):
        """Covariant area form ``eps_ab = sqrt(g) epsilon_ab``."""
        return self.sqrt_g[..., None, None] * LEVI_CIVITA_2D

    @cached_property
    def eps_up(self):
        """Contravariant ``eps^ab = epsilon^ab / sqrt(g)``."""
        return LEVI_CIVITA_2D / self.sqrt_g[..., None, None]

    def raise_both(self, t):
        return np.einsum("...ac,...bd,...cd->...ab", self.g_inv, self.g_inv, t)

    def lower_both(self, t):
        return np.einsum("...ac,...bd,...cd->...ab", self.g, self.g, t)

    def trace(self, t):
        return np.einsum("...ab,...ab->...", self.g_inv, t)

    @cached_property
    def operators(self):
        return SurfaceOperators(self)

    def area(self):
        return float(self.operators.mass.sum())

    def integrate(self, f):
        """Quadrature of a scalar field against the area element."""
        return self.operators.integrate(f)


@dataclass(frozen=True)
class Connection:
    grid: Grid
    gamma: np.ndarray  # [..., b, a, c] = Gamma^b_ac


@dataclass(frozen=True)
class CurvatureData:
    normal: np.ndarray
    K: np.ndarray
    mean_curvature: np.ndarray
    gaussian_curvature: np.ndarray


def induced_metric(e: Embedding) -> MetricField:
    """``g_ab = d_a R . d_b R`` with centered differences."""
    ru, rv = e.tangents()
    g = np.empty(e.grid.shape + (2, 2))
    g[..., 0, 0] = np.einsum("...i,...i->...", ru, ru)
    g[..., 1, 1] = np.einsum("...i,...i->...", rv, rv)
    g[..., 0, 1] = g[..., 1, 0] = np.einsum("...i,...i->...", ru, rv)
    return MetricField(e.grid, g)


def metric_derivatives(m: MetricField):
    """``dg[..., c, a, b] = d_c g_ab``."""
    grid = m.grid
    flat = m.g.reshape(grid.shape + (4,))
    du = grid.d(flat, "u").reshape(grid.shape + (2, 2))
    dv = grid.d(flat, "v").reshape(grid.shape + (2, 2))
    return np.stack([du, dv], axis=-3)


def christoffel(m: MetricField) -> Connection:
    dg = metric_derivatives(m)
    # lower[..., d, a, c] = 1/2 (d_a g_dc + d_c g_ad - d_d g_ac)
    lower = 0.5 * (np.einsum("...adc->...dac", dg) + np.einsum("...cad->...dac", dg) - dg)
    gamma = np.einsum("...bd,...dac->...bac", m.g_inv, lower)
    gamma = _regularize_apex(m.grid, gamma)
    return Connection(m.grid, gamma)


def second_covariant_derivative(e: Embedding, c: Connection):
    """``D_a D_b R`` for each embedding component, shape ``(..., 2, 2, 3)``."""
    grid = e.grid
    r = e.positions
    ru, rv = e.tangents()
    dd = np.empty(grid.shape + (2, 2, 3))
    dd[..., 0, 0, :] = grid.d(r, "uu")
    dd[..., 1, 1, :] = grid.d(r, "vv")
    dd[..., 0, 1, :] = dd[..., 1, 0, :] = grid.d(r, "uv")
    first = np.stack([ru, rv], axis=-2)
    return dd - np.einsum("...cab,...ci->...abi", c.gamma, first)


def unit_normal(ru, rv):
    n = np.cross(ru, rv)
    norm = np.linalg.norm(n, axis=-1)
    if np.any(norm == 0):
        idx = np.argwhere(norm == 0)[0]
        raise DegenerateNormalError(f"tangent vectors are parallel at node {tuple(idx)}")
    return n / norm[..., None]


def curvature_data(e: Embedding, m: MetricField, c: Connection) -> CurvatureData:
    ru, rv = e.tangents()
    if e.grid.is_polar:
        ru, rv = _regularize_apex(e.grid, ru), _regularize_apex(e.grid, rv)
    normal = unit_normal(ru, rv)
    dd = second_covariant_derivative(e, c)
    K = np.einsum("...i,...abi->...ab", normal, dd)
    K = _regularize_apex(e.grid, 0.5 * (K + np.swapaxes(K, -1, -2)))
    mean = np.einsum("...ab,...ab->...", m.g_inv, K)
    det_k = K[..., 0, 0] * K[..., 1, 1] - K[..., 0, 1] * K[..., 1, 0]
    return CurvatureData(normal, K, mean, det_k / m.det)


class SurfaceOperators:
    """Sparse operators in the reduced node space of a metric's grid.

    The Laplacian is assembled from a symmetric stiffness matrix ``A`` with
    ``f^T A f`` the discrete Dirichlet energy and a lumped mass ``M`` (nodal
    control areas including ``sqrt(g)``), so ``lap = -M^{-1} A`` is
    self-adjoint in the ``M`` inner product.  Diagonal metric terms use
    edge-midpoint coefficients, the mixed term uses cell-centred gradients.
    Open boundaries get half control volumes (natural Neumann rows).
    """

    def __init__(self, metric: MetricField, connection: Connection | None = None):
        self.metric = metric
        self.grid = grid = metric.grid
        self.connection = connection or christoffel(metric)
        s = metric.sqrt_g[..., None, None] * metric.g_inv
        if grid.is_polar:
            s = s.copy()
            s[0] = 0.0
        self._s = s

    @cached_property
    def mass_full(self):
        grid = self.grid
        w = grid.quadrature_weights() * self.metric.sqrt_g
        if grid.is_polar:
            # apex cap r < h/2 with sqrt(g) ~ r * (sqrt(g)/r at the first ring)
            w[0] = grid.h_v * grid.h_u * self.metric.sqrt_g[1] / 8.0
        return w

    @cached_property
    def mass(self):
        return self.grid.prolong.T @ self.mass_full.ravel()

    @cached_property
    def stiffness_full(self):
        grid = self.grid
        nu, nv = grid.shape
        hu, hv = grid.h_u, grid.h_v
        idx = np.arange(nu * nv).reshape(nu, nv)
        s = self._s
        rows, cols, vals = [], [], []

        def add_edge(i0, j0, i1, j1, c):
            a, b = idx[i0, j0].ravel(), idx[i1, j1].ravel()
            c = c.ravel()
            rows.extend([a, b, a, b])
            cols.extend([a, b, b, a])
            vals.extend([c, c, -c, -c])

        # u-edges
        iu = np.arange(nu) if grid.periodic_u else np.arange(nu - 1)
        ju = np.arange(nv)
        i0, j0 = np.meshgrid(iu, ju, indexing="ij")
        i1 = (i0 + 1) % nu
        cu = 0.5 * (s[i0, j0, 0, 0] + s[i1, j0, 0, 0]) * hv / hu
        if not grid.periodic_v:
            cu[:, [0, -1]] *= 0.5
        add_edge(i0, j0, i1, j0, cu)
        # v-edges
        jv = np.arange(nv) if grid.periodic_v else np.arange(nv - 1)
        i0, j0 = np.meshgrid(np.arange(nu), jv, indexing="ij")
        j1 = (j0 + 1) % nv
        cv = 0.5 * (s[i0, j0, 1, 1] + s[i0, j1, 1, 1]) * hu / hv
        if not grid.periodic_u and not grid.is_polar:
            cv[[0, -1], :] *= 0.5
        elif grid.is_polar:
            cv[-1, :] *= 0.5
        add_edge(i0, j0, i0, j1, cv)
        a = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nu * nv, nu * nv))
        # mixed term on cells
        i0, j0 = np.meshgrid(iu, jv, indexing="ij")
        i1, j1 = (i0 + 1) % nu, (j0 + 1) % nv
        suv = 0.25 * (s[i0, j0, 0, 1] + s[i1, j0, 0, 1] + s[i0, j1, 0, 1] + s[i1, j1, 0, 1])
        if np.any(suv != 0):
            ncell = suv.size
            cell = np.arange(ncell)
            corners = [idx[i0, j0].ravel(), idx[i1, j0].ravel(), idx[i0, j1].ravel(), idx[i1, j1].ravel()]
            cu_vals = np.array([-1, 1, -1, 1]) / (2 * hu)
            cv_vals = np.array([-1, -1, 1, 1]) / (2 * hv)
            cu_op = sp.csr_matrix((np.repeat(cu_vals, ncell), (np.tile(cell, 4), np.concatenate(corners))),
                                  shape=(ncell, nu * nv))
            cv_op = sp.csr_matrix((np.repeat(cv_vals, ncell), (np.tile(cell, 4), np.concatenate(corners))),
                                  shape=(ncell, nu * nv))
            wdiag = sp.diags(suv.ravel() * hu * hv)
            a = a + cu_op.T @ wdiag @ cv_op + cv_op.T @ wdiag @ cu_op
        return a.tocsr()

    @cached_property
    def stiffness(self):
        p = self.grid.prolong
        return (p.T @ self.stiffness_full @ p).tocsr()

    @cached_property
    def laplacian(self):
        return (-sp.diags(1.0 / self.mass) @ self.stiffness).tocsr()

    @cached_property
    def gradient(self):
        """Reduced first-derivative matrices ``(D_u, D_v)``."""
        return self.grid.reduced_operator("u"), self.grid.reduced_operator("v")

    @cached_property
    def hessian(self):
        """Covariant Hessian matrices ``H[(a, b)]`` with ``(H f) = D_a D_b f``."""
        grid = self.grid
        gam = self.connection.gamma
        du, dv = self.gradient
        second = {(0, 0): "uu", (0, 1): "uv", (1, 1): "vv"}
        red_gamma = grid.to_reduced(gam)
        out = {}
        for (a, b), name in second.items():
            op = grid.reduced_operator(name)
            op = op - sp.diags(red_gamma[:, 0, a, b]) @ du - sp.diags(red_gamma[:, 1, a, b]) @ dv
            if grid.is_polar:
                op = op.tolil()
                op[0, :] = 0.0
            out[(a, b)] = op.tocsr()
        out[(1, 0)] = out[(0, 1)]
        return out

    @cached_property
    def _bracket_weights(self):
        # T^{ab,cd} = g^ab g^cd - g^ac g^bd, per reduced node
        gi = self.grid.to_reduced(self.metric.g_inv)
        t = np.einsum("nab,ncd->nabcd", gi, gi) - np.einsum("nac,nbd->nabcd", gi, gi)
        pairs = [(0, 0), (0, 1), (1, 0), (1, 1)]
        return [(p, q, t[:, p[0], p[1], q[0], q[1]]) for p in pairs for q in pairs
                if np.any(t[:, p[0], p[1], q[0], q[1]] != 0)]

    @cached_property
    def _apex_functionals(self):
        # linear functionals on the circle r = h/2 around the apex, one row per angle
        grid = self.grid
        h, dt, nt = grid.h_u, grid.h_v, grid.n_v
        n = grid.n_nodes
        j = np.arange(nt)
        jp, jm = (j + 1) % nt, (j - 1) % nt
        ring1 = 1 + j
        ring1p, ring1m = 1 + jp, 1 + jm
        ring2p, ring2m = 1 + nt + jp, 1 + nt + jm

        def mat(entries):
            rows, cols, vals = [], [], []
            for c, v in entries:
                rows.append(j)
                cols.append(np.broadcast_to(c, j.shape))
                vals.append(np.broadcast_to(v, j.shape).astype(float))
            return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(nt, n))

        ring2 = 1 + nt + j
        # quadratic along each ray through (0, h, 2h): exact for cones and for r^2 modes
        radial = mat([(ring1, 1 / h), (0, -1 / h)])
        theta2 = mat([(ring1p, 0.75 / dt**2), (ring1, -1.5 / dt**2), (ring1m, 0.75 / dt**2),
                      (ring2p, -0.125 / dt**2), (ring2, 0.25 / dt**2), (ring2m, -0.125 / dt**2)])
        h_tt = radial * (2 / h) + theta2 * (4 / h**2)
        d1 = mat([(ring1p, 1 / (2 * dt)), (ring1m, -1 / (2 * dt))])
        d2 = mat([(ring2p, 1 / (2 * dt)), (ring2m, -1 / (2 * dt))])
        h_rt = (d2 - 2 * d1) / (2 * h**2)
        f_t = (6 * d1 - d2) / (4 * h)
        w = np.full(nt, dt * h / 2) / self.mass[0]
        return radial, h_tt, h_rt, f_t, w

    def _apex_value(self, g, f):
        radial, h_tt, h_rt, f_t, w = self._apex_functionals
        one = (h_tt @ g) * (radial @ f) - (h_rt @ g) * (f_t @ f)
        two = (h_tt @ f) * (radial @ g) - (h_rt @ f) * (f_t @ g)
        return 0.5 * float(w @ (one + two))

    def _apex_row(self, g):
        radial, h_tt, h_rt, f_t, w = self._apex_functionals
        row = (sp.diags(w * (h_tt @ g)) @ radial - sp.diags(w * (h_rt @ g)) @ f_t
               + sp.diags(w * (radial @ g)) @ h_tt - sp.diags(w * (f_t @ g)) @ h_rt)
        return 0.5 * np.asarray(row.sum(axis=0)).ravel()

    def bracket(self, g, f):
        """Covariant Monge-Ampere bracket ``Dg Df - D^aD^b g D_aD_b f`` (reduced vectors).

        Flat Cartesian limit: ``g_xx f_yy + g_yy f_xx - 2 g_xy f_xy``.  On a
        polar grid the apex row is the flux of ``cof(Hess g) grad f`` through
        the circle ``r = h/2``, which captures curvature concentrated at the
        apex (a cone carries ``[f, f] = 2 pi A^2`` there).
        """
        hs = self.hessian
        out = np.zeros(self.grid.n_nodes)
        for p, q, t in self._bracket_weights:
            out += t * (hs[p] @ g) * (hs[q] @ f)
        if self.grid.is_polar:
            out[0] = self._apex_value(g, f)
        return out

    def bracket_jacobian(self, g):
        """Sparse matrix ``J`` with ``J f = [g, f]``."""
        hs = self.hessian
        jac = sp.csr_matrix((self.grid.n_nodes, self.grid.n_nodes))
        for p, q, t in self._bracket_weights:
            jac = jac + sp.diags(t * (hs[p] @ g)) @ hs[q]
        if self.grid.is_polar:
            jac = jac.tolil()
            jac[0, :] = self._apex_row(g)
        return jac.tocsr()

    def integrate(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape[:2] == self.grid.shape:
            return float(np.sum(self.mass_full * f))
        return float(self.mass @ f)

    def inner(self, f, g):
        return self.integrate(np.asarray(f) * np.asarray(g))

    def boundary_nodes(self):
        """Reduced indices of nodes on open edges."""
        mask = self.grid.to_reduced(self.grid.boundary_mask().astype(float)) > 0.5
        return np.flatnonzero(mask)


def covariant_laplacian(m: MetricField, f) -> np.ndarray:
    """``(1/sqrt g) d_a (sqrt g g^ab d_b f)`` via the conservative stencil."""
    grid = m.grid
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    ops = m.operators
    return grid.to_full(ops.laplacian @ grid.to_reduced(f))


def _source_nodes(grid, source):
    if isinstance(source, str):
        if source != "pole" or not grid.is_polar:
            raise ValueError(f"unsupported source {source!r}")
        return [0]
    if isinstance(source, tuple) and len(source) == 2 and np.isscalar(source[0]):
        source = [source]
    return sorted({grid.reduced_index(int(i), int(j)) for i, j in source})


def covariant_green_function(m: MetricField, source, *, closed=None,
                             neutralization="uniform", sink=None, tol=1e-8):
    """Solve ``D_a D^a G = 2 pi delta / sqrt(g)`` and return ``G`` (zero mean).

    ``source`` is a node ``(i, j)``, a list of nodes sharing the unit charge
    equally (e.g. the first theta ring around a pole), or ``"pole"`` for
    the apex of a polar grid.  On closed surfaces (``closed=True``; default
    is closed iff the grid is periodic in both directions) the net charge is
    neutralized either by a uniform density ``-2 pi / area``
    (``neutralization="uniform"``) or by an opposite charge on ``sink``
    (``"antipodal"``).  Open surfaces use ``G = 0`` on the open edges.
    """
    grid = m.grid
    ops = m.operators
    if closed is None:
        closed = grid.topology == "periodic-both"
    n = grid.n_nodes
    b = np.zeros(n)
    src = _source_nodes(grid, source)
    b[src] += 2 * np.pi / len(src)
    a = ops.stiffness
    if closed:
        if neutralization == "uniform":
            b -= 2 * np.pi * ops.mass / ops.mass.sum()
        elif neutralization == "antipodal":
            if sink is None:
                raise ValueError("antipodal neutralization needs a sink")
            snk = _source_nodes(grid, sink)
            b[snk] -= 2 * np.pi / len(snk)
        else:
            raise ValueError(f"unknown neutralization {neutralization!r}")
        # singular Neumann system: pin one node, then fix the mean
        pin = n - 1 if src[0] != n - 1 else 0
        keep = np.setdiff1d(np.arange(n), [pin])
        sol = np.zeros(n)
        sol[keep] = spla.spsolve((-a)[keep][:, keep].tocsc(), b[keep])
    else:
        fixed = ops.boundary_nodes()
        keep = np.setdiff1d(np.arange(n), fixed)
        sol = np.zeros(n)
        sol[keep] = spla.spsolve((-a)[keep][:, keep].tocsc(), b[keep])
    resid = (-a @ sol - b)[keep]
    scale = max(np.abs(b).max(), 1.0)
    if not np.all(np.isfinite(sol)) or np.abs(resid).max() > tol * scale:
        raise SolverError("Green function solve did not converge", float(np.abs(resid).max()))
    sol -= (ops.mass @ sol) / ops.mass.sum()
    return grid.to_full(sol)
