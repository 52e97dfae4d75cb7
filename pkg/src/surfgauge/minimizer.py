"""Discrete total energy of a gauged elastic surface and its minimization.

The energy is ``elastic + yang_mills + bending + gaussian_bending``:

* elastic: bilinear (Q1) cells with 2x2 Gauss quadrature of
  ``(1/8) sqrt(g) [lambda (trE)^2 + 2 mu tr(E^2)]``, where
  ``E_ab = nabla_a R . nabla_b R - g_ab`` and ``nabla_a R = d_a R + W_a x R``;
* yang_mills: the gauge field is held fixed, so this is a constant;
* bending: nodal finite differences of ``(kappa/2) sqrt(g) (trK)^2`` and
  ``(kappa_G/2) sqrt(g) det(g^-1 K)`` with
  ``K_ab = N . (nabla_a nabla_b R - Gamma^c_ab nabla_c R)`` and ``N`` the
  unit normal of the gauged tangents.

The reference metric ``g`` and its Christoffel symbols come from the
reference embedding and reference gauge field.  Nodes inside the core of a
registered vortex are left out of the bending sum, where the potential is
singular.  Gradients are assembled by hand in reverse mode.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elastic import MaterialParams
from .gauge import GaugeField, core_mask, field_strength, yang_mills_energy
from .geometry import MetricField, christoffel
from .grid import Embedding, Grid, GridError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyBreakdown:
    elastic: float
    yang_mills: float
    bending: float
    gaussian_bending: float

    @property
    def total(self):
        return self.elastic + self.yang_mills + self.bending + self.gaussian_bending

    def to_mapping(self):
        return {"elastic": self.elastic, "yang_mills": self.yang_mills, "bending": self.bending,
                "gaussian_bending": self.gaussian_bending, "total": self.total}


def _cross(a, b):
    # broadcasting cross product on the last axis; much cheaper than np.cross for small stacks
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _gauged(w, x):
    # nabla_a X = d_a X + W_a x X for stacked derivatives dx[..., a, :]
    return _cross(w, x[..., None, :])


def _contract_c(gamma, v):
    # sum_c gamma[n, c, a, b] v[n, c, i] -> [n, a, b, i]
    return gamma[:, 0, :, :, None] * v[:, 0, None, None, :] + gamma[:, 1, :, :, None] * v[:, 1, None, None, :]


class EnergyModel:
    """Discrete energy for fixed reference data and fixed gauge field.

    Parameters
    ----------
    w, e0, w0 : GaugeField, Embedding, GaugeField
        Dynamical gauge field (held fixed), reference embedding and
        reference gauge field, all on the same grid.
    core_radius : float, optional
        Radius around registered vortices excluded from the bending sum;
        ``2 max(h_u, h_v)`` by default.
    """

    def __init__(self, w: GaugeField, e0: Embedding, w0: GaugeField, p: MaterialParams, *,
                 core_radius=None):
        grid = e0.grid
        if w.grid != grid or w0.grid != grid:
            raise GridError("gauge fields and reference must share one grid")
        if grid.is_polar:
            raise GridError("the shape energy uses tensor-product grids without a polar apex")
        self.grid, self.p = grid, p
        self.w, self.e0, self.w0 = w, e0, w0
        self.n = grid.n_u * grid.n_v
        self.W = w.W.reshape(self.n, 2, 3)
        if core_radius is None:
            core_radius = 2 * max(grid.h_u, grid.h_v)
        self.core_radius = core_radius
        singular = tuple(w.singular) + tuple(w0.singular)
        self.core = core_mask(grid, singular, core_radius).ravel()

    # -- discretization data -------------------------------------------------

    @cached_property
    def _cells(self):
        grid = self.grid
        nu, nv = grid.shape
        iu = np.arange(nu if grid.periodic_u else nu - 1)
        iv = np.arange(nv if grid.periodic_v else nv - 1)
        i, j = np.meshgrid(iu, iv, indexing="ij")
        i, j = i.ravel(), j.ravel()
        ip, jp = (i + 1) % nu, (j + 1) % nv
        return np.stack([i * nv + j, ip * nv + j, i * nv + jp, ip * nv + jp], axis=1)

    @cached_property
    def _gauss(self):
        """Sparse maps nodes -> Gauss points: values, d/du, d/dv; and weights."""
        grid = self.grid
        cells = self._cells
        nc = len(cells)
        g = 0.5 - 0.5 / np.sqrt(3.0)
        pts = [(g, g), (1 - g, g), (g, 1 - g), (1 - g, 1 - g)]
        rows, cols = [], []
        vals, du, dv = [], [], []
        for q, (s, t) in enumerate(pts):
            shape = [(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t]
            ds = [-(1 - t), (1 - t), -t, t]
            dt = [-(1 - s), -s, (1 - s), s]
            for k in range(4):
                rows.append(np.arange(nc) * 4 + q)
                cols.append(cells[:, k])
                vals.append(np.full(nc, shape[k]))
                du.append(np.full(nc, ds[k] / grid.h_u))
                dv.append(np.full(nc, dt[k] / grid.h_v))
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        mk = lambda d: sp.csr_matrix((np.concatenate(d), (rows, cols)), shape=(4 * nc, self.n))
        weight = np.full(4 * nc, grid.h_u * grid.h_v / 4)
        return mk(vals), mk(du), mk(dv), weight

    @cached_property
    def _gauss_reference(self):
        bv, bu, bvv, weight = self._gauss
        w_gp = np.stack([bv @ self.W[:, 0], bv @ self.W[:, 1]], axis=1)
        w0 = self.w0.W.reshape(self.n, 2, 3)
        w0_gp = np.stack([bv @ w0[:, 0], bv @ w0[:, 1]], axis=1)
        r0 = self.e0.positions.reshape(self.n, 3)
        d0 = np.stack([bu @ r0, bvv @ r0], axis=1) + _gauged(w0_gp, bv @ r0)
        g = np.einsum("qai,qbi->qab", d0, d0)
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
        if np.any(det <= 0):
            raise GridError("reference metric degenerates at a Gauss point")
        g_inv = np.stack([np.stack([g[:, 1, 1], -g[:, 0, 1]], -1),
                          np.stack([-g[:, 1, 0], g[:, 0, 0]], -1)], 1) / det[:, None, None]
        return w_gp, g, g_inv, weight * np.sqrt(det)

    @cached_property
    def _nodal_reference(self):
        grid = self.grid
        r0 = self.e0.positions
        w0 = self.w0.W
        d0 = np.stack([grid.d(r0, "u"), grid.d(r0, "v")], axis=-2)
        d0 = d0 + np.cross(w0, r0[..., None, :])
        g = np.einsum("...ai,...bi->...ab", d0, d0)
        metric = MetricField(grid, g)
        gamma = christoffel(metric).gamma.reshape(self.n, 2, 2, 2)
        sqrt_g = metric.sqrt_g.ravel()
        weight = (grid.quadrature_weights() * metric.sqrt_g).ravel()
        weight = np.where(self.core, 0.0, weight)
        return metric, metric.g_inv.reshape(self.n, 2, 2), metric.det.ravel(), gamma, weight, sqrt_g

    @cached_property
    def _fd(self):
        grid = self.grid
        ops = {k: grid.operator(k) for k in ("u", "v", "uu", "uv", "vv")}
        dw = np.stack([np.stack([ops[a] @ self.W[:, b] for b in range(2)], axis=1)
                       for a in ("u", "v")], axis=1)  # [n, a, b, 3] = d_a W_b
        return ops, dw

    @cached_property
    def yang_mills(self):
        metric = self._nodal_reference[0]
        return yang_mills_energy(field_strength(self.w), metric, self.p.s, singular=self.w.singular,
                                 core_radius=self.core_radius)

    # -- elastic ---------------------------------------------------------------

    def _elastic(self, x, want_grad):
        bv, bu, bvv, _ = self._gauss
        w_gp, g, g_inv, wt = self._gauss_reference
        p = self.p
        r = bv @ x
        v = np.stack([bu @ x, bvv @ x], axis=1) + _gauged(w_gp, r)
        v0, v1 = v[:, 0], v[:, 1]
        e00 = (v0 * v0).sum(-1) - g[:, 0, 0]
        e01 = (v0 * v1).sum(-1) - g[:, 0, 1]
        e11 = (v1 * v1).sum(-1) - g[:, 1, 1]
        i00, i01, i11 = g_inv[:, 0, 0], g_inv[:, 0, 1], g_inv[:, 1, 1]
        # A = g^-1 E, E^ab = A g^-1
        a00, a01 = i00 * e00 + i01 * e01, i00 * e01 + i01 * e11
        a10, a11 = i01 * e00 + i11 * e01, i01 * e01 + i11 * e11
        u00, u01, u11 = a00 * i00 + a01 * i01, a00 * i01 + a01 * i11, a10 * i01 + a11 * i11
        tr = a00 + a11
        tr2 = u00 * e00 + 2 * u01 * e01 + u11 * e11
        energy = 0.125 * float(wt @ (p.lam * tr**2 + 2 * p.mu * tr2))
        if not want_grad:
            return energy, None
        c = 0.5 * wt  # 2 * dphi = 0.5 wt (lam tr g^ab + 2 mu E^ab)
        d00 = c * (p.lam * tr * i00 + 2 * p.mu * u00)
        d01 = c * (p.lam * tr * i01 + 2 * p.mu * u01)
        d11 = c * (p.lam * tr * i11 + 2 * p.mu * u11)
        dv = np.stack([d00[:, None] * v0 + d01[:, None] * v1, d01[:, None] * v0 + d11[:, None] * v1], axis=1)
        dr = _cross(dv, w_gp).sum(axis=1)
        grad = bu.T @ dv[:, 0] + bvv.T @ dv[:, 1] + bv.T @ dr
        return energy, grad

    # -- bending ---------------------------------------------------------------

    def _bending_forward(self, x):
        ops, dw = self._fd
        W = self.W
        ra = np.stack([ops["u"] @ x, ops["v"] @ x], axis=1)                  # [n, a, 3]
        r_uv = ops["uv"] @ x
        rab = np.stack([np.stack([ops["uu"] @ x, r_uv], 1), np.stack([r_uv, ops["vv"] @ x], 1)], 1)
        V = ra + _cross(W, x[:, None, :])
        _, g_inv, det, gamma, _, _ = self._nodal_reference
        U = (rab + _cross(dw, x[:, None, None, :]) + _cross(W[:, None, :, :], ra[:, :, None, :])
             + _cross(W[:, :, None, :], V[:, None, :, :]) - _contract_c(gamma, V))
        Us = 0.5 * (U + np.swapaxes(U, 1, 2))
        nvec = _cross(V[:, 0], V[:, 1])
        nrm = np.linalg.norm(nvec, axis=-1)
        if np.any(nrm[self._nodal_reference[4] > 0] <= 0):
            raise GridError("degenerate tangent plane in the bending energy")
        N = nvec / np.where(nrm > 0, nrm, 1.0)[:, None]
        K = (Us * N[:, None, None, :]).sum(-1)
        H = (g_inv * K).sum(axis=(1, 2))
        detK = K[:, 0, 0] * K[:, 1, 1] - K[:, 0, 1] * K[:, 1, 0]
        return dict(ra=ra, V=V, Us=Us, N=N, nrm=nrm, K=K, H=H, detK=detK, det=det, g_inv=g_inv,
                    gamma=gamma)

    def _bending(self, x, want_grad, want_dw=False):
        f = self._bending_forward(x)
        wt = self._nodal_reference[4]
        p = self.p
        c1 = 0.5 * p.kappa * wt
        c2 = 0.5 * p.kappa_g * wt / f["det"]
        e_b = float(c1 @ f["H"] ** 2)
        e_g = float(c2 @ f["detK"])
        if not want_grad:
            return e_b, e_g, None, None
        ops, dw = self._fd
        W = self.W
        K = f["K"]
        cof = np.stack([np.stack([K[:, 1, 1], -K[:, 1, 0]], -1), np.stack([-K[:, 0, 1], K[:, 0, 0]], -1)], 1)
        dK = (2 * c1 * f["H"])[:, None, None] * f["g_inv"] + c2[:, None, None] * cof
        N, Us, V, ra, nrm = f["N"], f["Us"], f["V"], f["ra"], f["nrm"]
        dUs = dK[..., None] * N[:, None, None, :]
        dN = (dK[..., None] * Us).sum(axis=(1, 2))
        dU = 0.5 * (dUs + np.swapaxes(dUs, 1, 2))
        dn = (dN - N * (N * dN).sum(-1)[:, None]) / np.where(nrm > 0, nrm, 1.0)[:, None]
        dV = np.stack([_cross(V[:, 1], dn), _cross(dn, V[:, 0])], axis=1)
        # U_ab = R_ab + dW_ab x R + W_b x R_a + W_a x V_b - Gamma^c_ab V_c
        drab = dU
        dr = _cross(dU, dw).sum(axis=(1, 2))
        dra = _cross(dU, W[:, None, :, :]).sum(axis=2)
        dV += _cross(dU, W[:, :, None, :]).sum(axis=1)
        gamma = f["gamma"]
        dV -= np.stack([(gamma[:, c, :, :, None] * dU).sum(axis=(1, 2)) for c in range(2)], axis=1)
        # V_a = R_a + W_a x R
        dra += dV
        dr += _cross(dV, W).sum(axis=1)
        grad = (ops["u"].T @ dra[:, 0] + ops["v"].T @ dra[:, 1] + ops["uu"].T @ drab[:, 0, 0]
                + ops["vv"].T @ drab[:, 1, 1] + ops["uv"].T @ (drab[:, 0, 1] + drab[:, 1, 0]) + dr)
        if not want_dw:
            return e_b, e_g, grad, None
        # gauge-field sensitivity for the I^b diagnostic
        dW = _cross(x[:, None, :], dV)                                       # from V_a
        dW += _cross(ra[:, :, None, :], dU).sum(axis=1)                      # W_b x R_a
        dW += _cross(V[:, None, :, :], dU).sum(axis=2)                       # W_a x V_b
        ddw = _cross(x[:, None, None, :], dU)                                # dW_ab x R
        dW[:, 0] += ops["u"].T @ ddw[:, 0, 0] + ops["v"].T @ ddw[:, 1, 0]
        dW[:, 1] += ops["u"].T @ ddw[:, 0, 1] + ops["v"].T @ ddw[:, 1, 1]
        return e_b, e_g, grad, dW

    # -- preconditioner --------------------------------------------------------

    @cached_property
    def _gauss_pattern(self):
        bv, bu, bvv, _ = self._gauss
        coo = [m.tocoo() for m in (bv, bu, bvv)]
        assert all(np.array_equal(coo[0].row, c.row) and np.array_equal(coo[0].col, c.col) for c in coo)
        return coo[0].row, coo[0].col, coo[0].data, coo[1].data, coo[2].data

    def gauss_newton(self, x):
        """Positive semidefinite Hessian model at ``x`` on the ``3n`` position unknowns.

        Elastic part: Gauss-Newton plus the stress (geometric) stiffness
        with the stress clipped to its positive semidefinite part.  Bending
        part: ``kappa Lap^T A Lap`` per component with the reference Laplacian.
        """
        x = np.asarray(x, float).reshape(self.n, 3)
        bv, bu, bvv, _ = self._gauss
        w_gp, g, g_inv, wt = self._gauss_reference
        rows, cols, nv_, nu_, nvv_ = self._gauss_pattern
        nq = bv.shape[0]
        r = bv @ x
        V = np.stack([bu @ x, bvv @ x], axis=1) + _gauged(w_gp, r)
        da = (nu_, nvv_)

        def m_ab(a, b):
            # dE_ab / dx as a sparse (nq, 3n) matrix
            coef = (da[b][:, None] * V[rows, a] + da[a][:, None] * V[rows, b]
                    + nv_[:, None] * (np.cross(V[rows, a], w_gp[rows, b]) + np.cross(V[rows, b], w_gp[rows, a])))
            cc = (3 * cols[:, None] + np.arange(3)).ravel()
            rr = np.repeat(rows, 3)
            return sp.csr_matrix((coef.ravel(), (rr, cc)), shape=(nq, 3 * self.n))

        m = {(0, 0): m_ab(0, 0), (0, 1): m_ab(0, 1), (1, 1): m_ab(1, 1)}
        m[(1, 0)] = m[(0, 1)]
        chol = np.linalg.cholesky(g_inv)  # g_inv = L L^T
        prim = {}
        for i, j in ((0, 0), (0, 1), (1, 1)):
            acc = None
            for a in range(2):
                for b in range(2):
                    term = sp.diags(chol[:, a, i] * chol[:, b, j]) @ m[(a, b)]
                    acc = term if acc is None else acc + term
            prim[(i, j)] = acc
        W = sp.diags(0.25 * wt)
        p = self.p
        tr = prim[(0, 0)] + prim[(1, 1)]
        h = p.lam * (tr.T @ W @ tr) + 2 * p.mu * (prim[(0, 0)].T @ W @ prim[(0, 0)]
                                                   + prim[(1, 1)].T @ W @ prim[(1, 1)]
                                                   + 2 * prim[(0, 1)].T @ W @ prim[(0, 1)])
        h = h + self._stress_stiffness(V, w_gp, g_inv, wt)
        if p.kappa > 0:
            ops, _ = self._fd
            _, gi, _, _, wb, _ = self._nodal_reference
            lap = (sp.diags(gi[:, 0, 0]) @ ops["uu"] + sp.diags(2 * gi[:, 0, 1]) @ ops["uv"]
                   + sp.diags(gi[:, 1, 1]) @ ops["vv"])
            kb = p.kappa * (lap.T @ sp.diags(wb) @ lap)
            h = h + sp.kron(kb, sp.identity(3), format="csr")
        return h.tocsr()

    def _gauged_derivative_maps(self, w_gp):
        """Sparse ``(3 nq, 3n)`` maps ``x -> nabla_a R`` at the Gauss points, ``a = u, v``."""
        rows, cols, nv_, nu_, nvv_ = self._gauss_pattern
        nq = self._gauss[0].shape[0]
        eye = np.eye(3)
        eps = np.zeros((3, 3, 3))
        eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1
        eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1
        out = []
        for a, da in enumerate((nu_, nvv_)):
            cross = np.einsum("ijk,qj->qik", eps, w_gp[:, a])  # (W_a x r)_i = C_ik r_k
            blk = da[:, None, None] * eye + nv_[:, None, None] * cross[rows]
            rr = np.broadcast_to(3 * rows[:, None, None] + np.arange(3)[None, :, None], blk.shape)
            cc = np.broadcast_to(3 * cols[:, None, None] + np.arange(3)[None, None, :], blk.shape)
            out.append(sp.csr_matrix((blk.ravel(), (rr.ravel(), cc.ravel())), shape=(3 * nq, 3 * self.n)))
        return out

    def _stress_stiffness(self, V, w_gp, g_inv, wt):
        # second-order term 2 dphi^ab (d nabla_a R . d nabla_b R) with dphi projected onto PSD
        p = self.p
        v0, v1 = V[:, 0], V[:, 1]
        g = self._gauss_reference[1]
        e = np.stack([np.stack([(v0 * v0).sum(-1), (v0 * v1).sum(-1)], -1),
                      np.stack([(v0 * v1).sum(-1), (v1 * v1).sum(-1)], -1)], 1) - g
        e_up = g_inv @ e @ g_inv
        tr = (g_inv * e).sum(axis=(1, 2))
        s2 = 0.5 * wt[:, None, None] * (p.lam * tr[:, None, None] * g_inv + 2 * p.mu * e_up)
        lam_, vec = np.linalg.eigh(s2)
        s2 = (vec * np.maximum(lam_, 0.0)[:, None, :]) @ np.swapaxes(vec, 1, 2)
        maps = self._gauged_derivative_maps(w_gp)
        h = None
        for a in range(2):
            for b in range(2):
                term = maps[a].T @ sp.diags(np.repeat(s2[:, a, b], 3)) @ maps[b]
                h = term if h is None else h + term
        return h

    # -- public ----------------------------------------------------------------

    def energy(self, x) -> EnergyBreakdown:
        x = np.asarray(x, float).reshape(self.n, 3)
        el, _ = self._elastic(x, False)
        eb, eg, _, _ = self._bending(x, False)
        return EnergyBreakdown(el, self.yang_mills, eb, eg)

    def value_and_grad(self, x):
        x = np.asarray(x, float).reshape(self.n, 3)
        el, g_el = self._elastic(x, True)
        eb, eg, g_b, _ = self._bending(x, True)
        return el + self.yang_mills + eb + eg, g_el + g_b

    def parts_grad(self, x):
        """``(elastic gradient, bending gradient, bending d/dW)`` as ``(n, 3)`` / ``(n, 2, 3)`` arrays."""
        x = np.asarray(x, float).reshape(self.n, 3)
        _, g_el = self._elastic(x, True)
        _, _, g_b, dW = self._bending(x, True, want_dw=True)
        return g_el, g_b, dW

    @cached_property
    def nodal_area(self):
        """Control area ``w sqrt(g)`` of each node (core nodes included)."""
        return (self.grid.quadrature_weights().ravel() * self._nodal_reference[5])


# -- functional API ------------------------------------------------------------


def total_energy(e: Embedding, w: GaugeField, e0: Embedding, w0: GaugeField, p: MaterialParams,
                 **model_kw) -> EnergyBreakdown:
    return EnergyModel(w, e0, w0, p, **model_kw).energy(e.positions)


def energy_gradient(e: Embedding, w: GaugeField, e0: Embedding, w0: GaugeField, p: MaterialParams,
                    **model_kw):
    """``d total / d node positions``, shape ``(n_u, n_v, 3)``."""
    _, grad = EnergyModel(w, e0, w0, p, **model_kw).value_and_grad(e.positions)
    return grad.reshape(e.grid.shape + (3,))


def _fd_divergence(grid, sqrt_g, vec):
    # (1/sqrt g) d_b (sqrt g V^b) for V^b of shape (n_u, n_v, 2, ...)
    sg = sqrt_g.reshape(grid.shape + (1,) * (vec.ndim - 3))
    return (grid.d(sg * vec[:, :, 0], "u") + grid.d(sg * vec[:, :, 1], "v")) / sg


def equilibrium_residual(e: Embedding, w: GaugeField, e0: Embedding, w0: GaugeField, p: MaterialParams,
                         *, form="variational", **model_kw):
    """Force and gauge-field balance residuals at every node.

    ``form="variational"`` returns the force balance as the discrete
    variational derivative ``-(1/(A_n)) dE/dR_n`` (``A_n`` the nodal
    control area), which is the discrete counterpart of
    ``(1/sqrt g) d_b (sqrt g sigma^b) + [W_b, sigma^b] + J``.
    ``form="strong"`` evaluates the stress divergence with nodal finite
    differences instead and adds the same discrete ``J``.

    The gauge residual is ``(1/sqrt g) d_a (sqrt g F^ab) + [sigma^b, R]/(2s) + I^b/(2s)``
    with ``I^b = -(1/A_n) dE_bend/dW_b``.
    """
    grid = e.grid
    model = EnergyModel(w, e0, w0, p, **model_kw)
    x = e.positions.reshape(-1, 3)
    g_el, g_b, dW = model.parts_grad(x)
    area = model.nodal_area[:, None]
    metric = model._nodal_reference[0]
    sigma = _nodal_stress_vectors(e, w, metric, p)
    sqrt_g = metric.sqrt_g
    j = -g_b / area
    if form == "variational":
        force = -g_el / area + j
    elif form == "strong":
        div = _fd_divergence(grid, sqrt_g, sigma).reshape(-1, 3)
        force = div + np.cross(w.W.reshape(-1, 2, 3), sigma.reshape(-1, 2, 3)).sum(axis=1) + j
    else:
        raise ValueError(f"unknown residual form {form!r}")
    # F^ab = epsilon^ab F_12 / det g for any 2x2 metric
    f12 = field_strength(w).F12 / metric.det[..., None]
    f_ab = np.zeros(grid.shape + (2, 2, 3))
    f_ab[..., 0, 1, :] = f12
    f_ab[..., 1, 0, :] = -f12
    div_f = np.stack([_fd_divergence(grid, sqrt_g, f_ab[..., :, b, :]) for b in range(2)], axis=-2)
    i_b = -dW / area[..., None]
    gauge = (div_f.reshape(-1, 2, 3) + np.cross(sigma.reshape(-1, 2, 3), x[:, None, :]) / (2 * p.s)
             + i_b / (2 * p.s))
    return force.reshape(grid.shape + (3,)), gauge.reshape(grid.shape + (2, 3))


def _nodal_stress_vectors(e, w, metric, p):
    from .elastic import strain_tensor, stress_density, stress_vectors

    E = strain_tensor(metric, e, w)
    return stress_vectors(e, w, stress_density(E, metric, p)).sigma


# -- minimization ----------------------------------------------------------------


@dataclass
class MinimizeReport:
    embedding: Embedding
    energies: list
    gradient_norm: float
    iterations: int
    converged: bool
    breakdown: EnergyBreakdown | None = None
    message: str = ""

    @property
    def energy(self):
        return self.energies[-1]


def _dof_basis(free):
    """Sparse selection of the unknowns of the free nodes among the ``3n`` position unknowns."""
    cols = np.flatnonzero(np.repeat(free, 3))
    return sp.csr_matrix((np.ones(len(cols)), (cols, np.arange(len(cols)))), shape=(3 * len(free), len(cols)))


def tilt_constraints(grid, singular, area):
    """Rows ``c_k`` of the mean-tilt constraints ``c_k . x = 0`` on the ``3n`` unknowns.

    ``c_0 . x = sum_n A_n (u_n - u_c) z_n`` and likewise for ``v``, with
    ``(u_c, v_c)`` the mean parameter position of the registered vortices
    (the area centroid without vortices).  The rotation axis of a z-only
    vortex is the lab z axis; holding the least-squares plane of the sheet
    horizontal keeps that axis normal to the surface on average.  With ``W``
    frozen a rigid tilt is not an exact symmetry of the discrete energy, and
    the sheet would otherwise drift into it.
    """
    uu, vv = (m.ravel() for m in grid.mesh)
    if singular:
        uc = np.mean([grid.u[i] for i, _, *_ in singular])
        vc = np.mean([grid.v[j] for _, j, *_ in singular])
    else:
        uc, vc = area @ uu / area.sum(), area @ vv / area.sum()
    c = np.zeros((2, 3 * grid.n_u * grid.n_v))
    c[0, 2::3] = area * (uu - uc)
    c[1, 2::3] = area * (vv - vc)
    return c


def _force_norm(grad, area, mask):
    f = np.linalg.norm(grad.reshape(-1, 3), axis=1) / area
    return float(f[mask].max()) if mask.any() else 0.0


def _write_checkpoint(path: Path, x, grid, iteration, energies, gnorm):
    from .io import write_field_csv

    path.mkdir(parents=True, exist_ok=True)
    write_field_csv(path / "positions.csv", grid, {"x": x[:, 0], "y": x[:, 1], "z": x[:, 2]})
    manifest = {"iteration": iteration, "energies": energies, "gradient_norm": gnorm}
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2))
    os.replace(tmp, path / "manifest.json")


def _read_checkpoint(path: Path, grid):
    from .io import read_field_csv

    fields = read_field_csv(path / "positions.csv", grid)
    manifest = json.loads((path / "manifest.json").read_text())
    x = np.stack([fields["x"].ravel(), fields["y"].ravel(), fields["z"].ravel()], axis=1)
    return x, manifest


def minimize_shape(e: Embedding, w: GaugeField, e0: Embedding, w0: GaugeField, p: MaterialParams, *,
                   gtol=1e-6, max_iter=5000, memory=12, bc="free", fix_tilt=True, precondition=True,
                   refresh=20, checkpoint_dir=None, checkpoint_every=0, resume=False,
                   **model_kw) -> MinimizeReport:
    """Minimize the total energy over node positions with ``W`` held fixed.

    Limited-memory BFGS with Armijo backtracking; every accepted step lowers
    the energy.  With ``precondition`` the initial inverse Hessian is a
    sparse LU factorization of :meth:`EnergyModel.gauss_newton`, rebuilt
    every ``refresh`` iterations.  Stops when the largest nodal force per unit control area
    over the free nodes outside vortex cores drops below ``gtol``.

    Parameters
    ----------
    bc : {"free", "pinned"}
        ``"pinned"`` holds the nodes on open edges at their initial positions.
    fix_tilt : bool
        Hold the mean tilt of the sheet at zero (see :func:`tilt_constraints`).
        The initial configuration is projected onto the constraint, and the
        reported force excludes the constraint force.
    checkpoint_dir : path, optional
        Directory for ``positions.csv`` and ``manifest.json``, written every
        ``checkpoint_every`` iterations; with ``resume`` the run restarts
        from an existing checkpoint there.
    """
    grid = e.grid
    model = EnergyModel(w, e0, w0, p, **model_kw)
    free = np.ones(model.n, dtype=bool)
    if bc == "pinned":
        free &= ~grid.boundary_mask().ravel()
    elif bc != "free":
        raise ValueError(f"unknown boundary condition {bc!r}")
    basis = _dof_basis(free)
    check = free & ~model.core
    area = model.nodal_area
    x = e.positions.reshape(-1).copy()
    start, energies = 0, []
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if resume and ckpt is not None and (ckpt / "manifest.json").exists():
        x, manifest = _read_checkpoint(ckpt, grid)
        x = x.ravel()
        start, energies = manifest["iteration"], list(manifest["energies"])
        log.info("resuming from iteration %d", start)
    x_fixed = x - basis @ (basis.T @ x)
    y = basis.T @ x
    full = tilt_constraints(grid, w.singular, area) if fix_tilt else np.zeros((0, len(x)))
    keep = np.linalg.norm(full @ basis, axis=1) > 0
    full = full[keep]
    cons = np.asarray(full @ basis)
    cct = cons @ cons.T

    def project(v):
        # Euclidean projection onto the constraint null space
        return v - cons.T @ np.linalg.solve(cct, cons @ v) if len(cons) else v

    if len(cons):
        y = y - cons.T @ np.linalg.solve(cct, cons @ y + full @ x_fixed)
    last = {}

    def fg(yy):
        val, grad = model.value_and_grad(x_fixed + basis @ yy)
        last[id(yy)] = grad
        return val, basis.T @ grad.ravel()

    def force(yy, gg):
        grad = last.pop(id(yy), None)
        last.clear()
        if grad is None:
            _, grad = model.value_and_grad(x_fixed + basis @ yy)
        if len(cons):
            # remove the constraint force (least-squares multipliers)
            lam = np.linalg.solve(cct, cons @ gg)
            grad = grad.ravel() - basis @ (cons.T @ lam)
        return _force_norm(grad, area, check)

    precond = [None, -1, None]

    def apply_h0(q, y_last, s_last):
        if precondition:
            if precond[0] is None or it - precond[1] >= refresh:
                h = basis.T @ model.gauss_newton(x_fixed + basis @ y) @ basis
                shift = 1e-8 * h.diagonal().max()
                precond[0] = spla.splu((h + shift * sp.identity(h.shape[0])).tocsc(),
                                       permc_spec="MMD_ATA")
                precond[1] = it
                if len(cons):
                    hc = precond[0].solve(np.ascontiguousarray(cons.T))
                    precond[2] = (hc, np.linalg.inv(cons @ hc))
            z = precond[0].solve(q)
            if len(cons):
                # H^-1 restricted to the constraint null space
                hc, schur = precond[2]
                z = z - hc @ (schur @ (cons @ z))
            return z
        q = project(q)
        if y_last is not None:
            return q * (s_last @ y_last) / (y_last @ y_last)
        return q * (0.1 * grid.h_u) / max(np.abs(q).max(), 1e-300)

    it = start
    f, g = fg(y)
    energies.append(f)
    s_hist, y_hist = [], []
    gnorm = force(y, g)
    converged = gnorm <= gtol
    message = "converged" if converged else ""
    while not converged and it < max_iter:
        it += 1
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s_k, y_k in reversed(list(zip(s_hist, y_hist))):
            rho = 1.0 / (y_k @ s_k)
            a = rho * (s_k @ q)
            alphas.append((a, rho))
            q -= a * y_k
        q = apply_h0(q, y_hist[-1] if y_hist else None, s_hist[-1] if s_hist else None)
        for (s_k, y_k), (a, rho) in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = rho * (y_k @ q)
            q += (a - b) * s_k
        d = -q
        slope = g @ d
        if slope >= 0:
            s_hist.clear(), y_hist.clear()
            d = -g / max(np.abs(g).max(), 1e-300) * 0.1 * grid.h_u
            slope = g @ d
        step = 1.0
        while True:
            y_new = y + step * d
            try:
                f_new, g_new = fg(y_new)
            except GridError:
                f_new = np.inf
            if f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-12:
                message = "line search failed"
                break
        if message:
            break
        s_k, y_k = y_new - y, g_new - g
        if y_k @ s_k > 1e-12 * np.linalg.norm(s_k) * np.linalg.norm(y_k):
            s_hist.append(s_k)
            y_hist.append(y_k)
            if len(s_hist) > memory:
                s_hist.pop(0), y_hist.pop(0)
        y, f, g = y_new, f_new, g_new
        energies.append(f)
        gnorm = force(y, g)
        converged = gnorm <= gtol
        log.debug("iteration %d step %.3g energy %.12g force %.3e", it, step, f, gnorm)
        if it % 100 == 0:
            log.info("iteration %d energy %.10g force %.3e", it, f, gnorm)
        if ckpt is not None and checkpoint_every and it % checkpoint_every == 0:
            _write_checkpoint(ckpt, (x_fixed + basis @ y).reshape(-1, 3), grid, it, energies, gnorm)
    if converged:
        message = "converged"
    elif not message:
        message = "iteration limit reached"
    x = (x_fixed + basis @ y).reshape(-1, 3)
    if ckpt is not None and checkpoint_every:
        _write_checkpoint(ckpt, x, grid, it, energies, gnorm)
    out = e.with_positions(x.reshape(grid.shape + (3,)))
    return MinimizeReport(out, energies, gnorm, it, converged, model.energy(x), message)
