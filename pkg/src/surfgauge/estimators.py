"""scikit-learn style wrappers around the solvers.

The solvers take no training data: hyperparameters go to the constructor,
``fit`` runs the solve and stores results in trailing-underscore attributes.
``get_params``/``set_params`` come from :class:`sklearn.base.BaseEstimator`,
which makes parameter sweeps and cloning work as usual.  ``score`` returns
the negative total energy, so larger is better.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .covariant import SurfaceProblem, solve_single_disclination
from .elastic import MaterialParams
from .gauge import DisclinationSpec, GaugeField, flat_vortex_potential
from .grid import Embedding, Grid
from .minimizer import minimize_shape
from .vonkarman import VkSource, classify_shape, solve_von_karman


class _SolverMixin:
    def _params(self):
        return MaterialParams(lam=self.lam, mu=self.mu, kappa=self.kappa, kappa_g=self.kappa_g, nu=self.nu)

    def _check_fitted(self):
        if not hasattr(self, "energy_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def score(self, X=None, y=None):
        self._check_fitted()
        return -self.energy_


class FlatDisclinationSolver(_SolverMixin, BaseEstimator):
    """Von Karman solve for a centred disclination on a flat disk.

    ``fit(seed=None)`` accepts an optional initial height field on the disk
    grid; ``X`` is ignored.
    """

    def __init__(self, nu=1 / 6, lam=1.0, mu=1.0, kappa=1.0, kappa_g=0.0, radius=1.0, n_r=41,
                 n_theta=64, bc_f="free", tol=1e-9, max_iter=60):
        self.nu = nu
        self.lam = lam
        self.mu = mu
        self.kappa = kappa
        self.kappa_g = kappa_g
        self.radius = radius
        self.n_r = n_r
        self.n_theta = n_theta
        self.bc_f = bc_f
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X=None, y=None, *, seed=None):
        grid = Grid.disk(self.radius, self.n_r, self.n_theta)
        st = solve_von_karman(VkSource.single(self.nu), self._params(), grid, {"f": self.bc_f},
                              seed=seed, tol=self.tol, max_iter=self.max_iter)
        self.state_ = st
        self.energy_ = st.energy
        self.shape_ = classify_shape(st)
        self.n_iter_ = st.iterations
        return self

    def predict(self, X=None):
        """Height and Airy fields ``(f, chi)`` on the disk grid."""
        self._check_fitted()
        return self.state_.f, self.state_.chi


class CovariantDisclinationSolver(_SolverMixin, BaseEstimator):
    """Single disclination on a Monge reference surface ``z0 = height(x, y)``.

    ``fit(X)`` takes the height callable as ``X`` (a flat disk when omitted).
    """

    def __init__(self, nu=0.05, lam=1.0, mu=1.0, kappa=1.0, kappa_g=0.0, radius=1.0, n_r=41,
                 n_theta=64, bc_f="free", tol=1e-9, max_iter=60, validity_threshold=0.2):
        self.nu = nu
        self.lam = lam
        self.mu = mu
        self.kappa = kappa
        self.kappa_g = kappa_g
        self.radius = radius
        self.n_r = n_r
        self.n_theta = n_theta
        self.bc_f = bc_f
        self.tol = tol
        self.max_iter = max_iter
        self.validity_threshold = validity_threshold

    def fit(self, X=None, y=None):
        height = X if X is not None else (lambda x, y: np.zeros_like(x))
        prob = SurfaceProblem.monge(height, self.radius, self.n_r, self.n_theta, self._params())
        st = solve_single_disclination(prob, {"f": self.bc_f}, tol=self.tol, max_iter=self.max_iter,
                                       validity_threshold=self.validity_threshold)
        self.problem_ = prob
        self.state_ = st
        self.energy_ = st.energy
        self.valid_ = st.valid
        self.n_iter_ = st.iterations
        return self

    def predict(self, X=None):
        """``(Rz, trE)`` on the disk grid."""
        self._check_fitted()
        return self.state_.Rz, self.state_.trE


class ShapeMinimizer(_SolverMixin, BaseEstimator):
    """Full nonlinear energy minimization of a square sheet with a centred vortex.

    ``fit(X)`` takes the initial height field ``(n, n)`` as ``X``; by default
    a cone for ``nu > 0`` and a saddle for ``nu < 0`` of the inextensional
    amplitude.
    """

    def __init__(self, nu=1 / 6, lam=1.0, mu=1.0, kappa=1e-3, kappa_g=0.0, half_width=1.0, n=33,
                 gtol=1e-5, max_iter=2000, precondition=True):
        self.nu = nu
        self.lam = lam
        self.mu = mu
        self.kappa = kappa
        self.kappa_g = kappa_g
        self.half_width = half_width
        self.n = n
        self.gtol = gtol
        self.max_iter = max_iter
        self.precondition = precondition

    def _setup(self):
        a = self.half_width
        grid = Grid(self.n, self.n, (-a, a), (-a, a))
        e0 = Embedding.flat(grid)
        w = flat_vortex_potential(DisclinationSpec((0.0, 0.0), self.nu), grid)
        return grid, e0, w, GaugeField.zeros(grid, role="reference")

    def initial_height(self, grid):
        x, y = grid.mesh
        r, th = np.hypot(x, y), np.arctan2(y, x)
        if self.nu > 0:
            return np.sqrt(2 * self.nu) * r
        return np.sqrt(4 * abs(self.nu) / 3) * r * np.cos(2 * th)

    def fit(self, X=None, y=None):
        grid, e0, w, w0 = self._setup()
        pos = e0.positions.copy()
        pos[..., 2] = self.initial_height(grid) if X is None else np.asarray(X, float)
        rep = minimize_shape(e0.with_positions(pos), w, e0, w0, self._params(), gtol=self.gtol,
                             max_iter=self.max_iter, precondition=self.precondition)
        self.report_ = rep
        self.embedding_ = rep.embedding
        self.energy_ = rep.energy
        self.breakdown_ = rep.breakdown
        self.converged_ = rep.converged
        self.n_iter_ = rep.iterations
        return self

    def predict(self, X=None):
        """Node positions ``(n, n, 3)`` of the minimizer."""
        self._check_fitted()
        return self.embedding_.positions
