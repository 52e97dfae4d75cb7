"""Structured parametric grids and their finite-difference operators.

Fields live on an ``(n_u, n_v)`` tensor grid and may carry trailing
component axes, e.g. an embedding is ``(n_u, n_v, 3)``.  Every difference
operator is a sparse matrix acting on the flattened node axis, so the same
stencils back both the nodal field evaluations and the sparse solvers.

On a ``disk-polar`` grid ``u`` is the radius starting at 0 and ``v`` the
polar angle.  All nodes of the ``u = 0`` row are the same physical point
(the apex); solvers work on a *reduced* vector where that row collapses to a
single unknown (see :meth:`Grid.prolong`).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

TOPOLOGIES = ("open", "periodic-u", "periodic-v", "periodic-both", "disk-polar")


class GridError(ValueError):
    pass


def _d1(n, h, periodic):
    if periodic:
        off = np.ones(n) / (2 * h)
        m = sp.diags([off[:-1], -off[:-1]], [1, -1], shape=(n, n), format="lil")
        m[0, n - 1] = -1 / (2 * h)
        m[n - 1, 0] = 1 / (2 * h)
        return m.tocsr()
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = -1 / (2 * h)
        m[i, i + 1] = 1 / (2 * h)
    m[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    m[n - 1, n - 3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return m.tocsr()


def _d2(n, h, periodic):
    if periodic:
        m = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1],
                     shape=(n, n), format="lil")
        m[0, n - 1] = 1.0
        m[n - 1, 0] = 1.0
        return (m / h**2).tocsr()
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1:i + 2] = np.array([1.0, -2.0, 1.0])
    m[0, :4] = np.array([2.0, -5.0, 4.0, -1.0])
    m[n - 1, n - 4:] = np.array([-1.0, 4.0, -5.0, 2.0])
    return (m / h**2).tocsr()


@dataclass(frozen=True)
class Grid:
    """Tensor-product grid over ``u_range x v_range``.

    Periodic axes exclude the right endpoint (``h = L / n``); open axes
    include both endpoints (``h = L / (n - 1)``).
    """

    n_u: int
    n_v: int
    u_range: tuple = (0.0, 1.0)
    v_range: tuple = (0.0, 1.0)
    topology: str = "open"

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise GridError(f"unknown topology {self.topology!r}; expected one of {TOPOLOGIES}")
        if self.n_u < 3 or self.n_v < 3:
            raise GridError("need at least 3 nodes per axis")
        if self.u_range[1] <= self.u_range[0] or self.v_range[1] <= self.v_range[0]:
            raise GridError("parameter ranges must be increasing")
        if self.topology == "disk-polar":
            if self.u_range[0] != 0.0:
                raise GridError("disk-polar grids start at r = 0")
            object.__setattr__(self, "v_range", (0.0, 2 * np.pi))
        object.__setattr__(self, "u_range", tuple(float(x) for x in self.u_range))
        object.__setattr__(self, "v_range", tuple(float(x) for x in self.v_range))

    @classmethod
    def disk(cls, radius, n_r, n_theta):
        return cls(n_r, n_theta, (0.0, radius), (0.0, 2 * np.pi), "disk-polar")

    @property
    def periodic_u(self):
        return self.topology in ("periodic-u", "periodic-both")

    @property
    def periodic_v(self):
        return self.topology in ("periodic-v", "periodic-both", "disk-polar")

    @property
    def is_polar(self):
        return self.topology == "disk-polar"

    @property
    def shape(self):
        return (self.n_u, self.n_v)

    @property
    def h_u(self):
        span = self.u_range[1] - self.u_range[0]
        return span / self.n_u if self.periodic_u else span / (self.n_u - 1)

    @property
    def h_v(self):
        span = self.v_range[1] - self.v_range[0]
        return span / self.n_v if self.periodic_v else span / (self.n_v - 1)

    @cached_property
    def u(self):
        return self.u_range[0] + self.h_u * np.arange(self.n_u)

    @cached_property
    def v(self):
        return self.v_range[0] + self.h_v * np.arange(self.n_v)

    @cached_property
    def mesh(self):
        return np.meshgrid(self.u, self.v, indexing="ij")

    @cached_property
    def planar_coordinates(self):
        """Cartesian ``(x, y)`` of each node under the grid's natural flat map."""
        uu, vv = self.mesh
        if self.is_polar:
            return uu * np.cos(vv), uu * np.sin(vv)
        return uu, vv

    # -- sparse stencils on the full tensor grid ---------------------------

    @cached_property
    def _ops(self):
        iu = sp.identity(self.n_u, format="csr")
        iv = sp.identity(self.n_v, format="csr")
        du = sp.kron(_d1(self.n_u, self.h_u, self.periodic_u), iv, format="csr")
        dv = sp.kron(iu, _d1(self.n_v, self.h_v, self.periodic_v), format="csr")
        duu = sp.kron(_d2(self.n_u, self.h_u, self.periodic_u), iv, format="csr")
        dvv = sp.kron(iu, _d2(self.n_v, self.h_v, self.periodic_v), format="csr")
        return {"u": du, "v": dv, "uu": duu, "vv": dvv, "uv": (du @ dv).tocsr()}

    def operator(self, name):
        """Sparse difference matrix ``'u'``, ``'v'``, ``'uu'``, ``'uv'`` or ``'vv'``."""
        return self._ops[name]

    def apply(self, op, f):
        """Apply a full-grid sparse operator to a nodal field with trailing axes."""
        f = np.asarray(f, dtype=float)
        if f.shape[:2] != self.shape:
            raise GridError(f"field shape {f.shape} does not match grid {self.shape}")
        if isinstance(op, str):
            op = self._ops[op]
        rest = f.shape[2:]
        out = op @ f.reshape(self.n_u * self.n_v, -1)
        return out.reshape(self.shape + rest)

    def d(self, f, which):
        return self.apply(which, f)

    # -- reduced (apex-merged) indexing ------------------------------------

    @property
    def n_nodes(self):
        """Number of distinct physical nodes."""
        if self.is_polar:
            return 1 + (self.n_u - 1) * self.n_v
        return self.n_u * self.n_v

    @cached_property
    def prolong(self):
        """Sparse map reduced vector -> full tensor-grid vector (apex replicated)."""
        n_full = self.n_u * self.n_v
        if not self.is_polar:
            return sp.identity(n_full, format="csr")
        cols = np.concatenate([np.zeros(self.n_v, dtype=int), np.arange(1, self.n_nodes)])
        return sp.csr_matrix((np.ones(n_full), (np.arange(n_full), cols)),
                             shape=(n_full, self.n_nodes))

    def to_reduced(self, f):
        f = np.asarray(f, dtype=float)
        flat = f.reshape(self.n_u * self.n_v, *f.shape[2:])
        if not self.is_polar:
            return flat.copy()
        return np.concatenate([flat[: self.n_v].mean(axis=0, keepdims=True), flat[self.n_v:]])

    def to_full(self, x):
        x = np.asarray(x, dtype=float)
        out = (self.prolong @ x.reshape(self.n_nodes, -1)).reshape(self.shape + x.shape[1:])
        return out

    def reduced_operator(self, op):
        """Conjugate a full-grid operator into the reduced space.

        The apex row is left empty; callers supply their own regularity or
        flux condition there.
        """
        if isinstance(op, str):
            op = self._ops[op]
        if not self.is_polar:
            return op.tocsr()
        red = (op @ self.prolong).tocsr()[self.n_v - 1:]
        red = red.tolil()
        red[0, :] = 0.0
        return red.tocsr()

    def nearest_node(self, u, v):
        i = int(round((u - self.u_range[0]) / self.h_u))
        j = int(round((v - self.v_range[0]) / self.h_v))
        if self.periodic_u:
            i %= self.n_u
        if self.periodic_v:
            j %= self.n_v
        if not (0 <= i < self.n_u and 0 <= j < self.n_v):
            raise GridError(f"point ({u}, {v}) lies outside the grid")
        return i, j

    def reduced_index(self, i, j):
        if self.is_polar:
            return 0 if i == 0 else 1 + (i - 1) * self.n_v + j
        return i * self.n_v + j

    def quadrature_weights(self):
        """Trapezoid weights in parameter space (no metric factor)."""
        wu = np.full(self.n_u, self.h_u)
        wv = np.full(self.n_v, self.h_v)
        if not self.periodic_u:
            wu[[0, -1]] *= 0.5
        if not self.periodic_v:
            wv[[0, -1]] *= 0.5
        return np.outer(wu, wv)

    def boundary_mask(self, width=1):
        """True on nodes within ``width`` nodes of an open edge."""
        mask = np.zeros(self.shape, dtype=bool)
        if not self.periodic_u:
            if self.is_polar:
                mask[-width:, :] = True
            else:
                mask[:width, :] = True
                mask[-width:, :] = True
        if not self.periodic_v:
            mask[:, :width] = True
            mask[:, -width:] = True
        return mask

    def refined(self, factor=2):
        """Grid with spacings divided by ``factor`` over the same ranges."""
        def n_new(n, periodic):
            return n * factor if periodic else (n - 1) * factor + 1
        return Grid(n_new(self.n_u, self.periodic_u), n_new(self.n_v, self.periodic_v),
                    self.u_range, self.v_range, self.topology)


@dataclass(frozen=True)
class Embedding:
    """Sampled map of the grid into R^3, ``positions`` of shape ``(n_u, n_v, 3)``."""

    grid: Grid
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != self.grid.shape + (3,):
            raise GridError(f"positions must have shape {self.grid.shape + (3,)}, got {pos.shape}")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def from_function(cls, grid, func):
        """Sample ``func(u, v) -> (x, y, z)`` on every node."""
        uu, vv = grid.mesh
        x, y, z = func(uu, vv)
        pos = np.stack(np.broadcast_arrays(x, y, z), axis=-1).astype(float)
        return cls(grid, pos)

    @classmethod
    def flat(cls, grid):
        x, y = grid.planar_coordinates
        return cls(grid, np.stack([x, y, np.zeros_like(x)], axis=-1))

    def tangents(self):
        g = self.grid
        return g.d(self.positions, "u"), g.d(self.positions, "v")

    def check_immersion(self, tol=1e-12):
        """Raise if the tangent cross product vanishes at an interior node."""
        ru, rv = self.tangents()
        cross = np.linalg.norm(np.cross(ru, rv), axis=-1)
        interior = ~self.grid.boundary_mask()
        if self.grid.is_polar:
            interior[0] = False
        scale = np.linalg.norm(ru, axis=-1) * np.linalg.norm(rv, axis=-1) + 1e-300
        bad = interior & (cross <= tol * scale)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise GridError(f"embedding is not an immersion at node ({i}, {j})")
        return True

    def with_positions(self, positions):
        return Embedding(self.grid, positions)
