import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import surfgauge
from surfgauge.estimators import CovariantDisclinationSolver, FlatDisclinationSolver, ShapeMinimizer


def test_params_and_clone():
    est = FlatDisclinationSolver(nu=0.05, n_r=11, n_theta=16)
    assert est.get_params()["nu"] == 0.05
    twin = clone(est.set_params(kappa=2.0))
    assert twin.kappa == 2.0 and not hasattr(twin, "energy_")


@pytest.mark.parametrize("cls", [FlatDisclinationSolver, CovariantDisclinationSolver, ShapeMinimizer])
def test_not_fitted(cls):
    with pytest.raises(NotFittedError):
        cls().predict()
    with pytest.raises(NotFittedError):
        cls().score()


def test_flat_solver_fit_predict_score():
    est = FlatDisclinationSolver(nu=0.1, kappa=1e3, n_r=21, n_theta=32).fit()
    f, chi = est.predict()
    assert f.shape == chi.shape == (21, 32)
    assert est.shape_ == "flat" and est.score() == -est.energy_


def test_covariant_solver_on_cap():
    est = CovariantDisclinationSolver(nu=0.02, kappa=1e-2, n_r=21, n_theta=32, validity_threshold=1.0)
    est.fit(lambda x, y: np.sqrt(25 - x**2 - y**2) - 5)
    rz, tre = est.predict()
    assert rz.shape == (21, 32) and est.valid_


def test_shape_minimizer_cone():
    est = ShapeMinimizer(nu=0.1, kappa=1e-2, n=17, gtol=1e-6).fit()
    assert est.converged_
    pos = est.predict()
    assert pos.shape == (17, 17, 3)
    assert est.breakdown_.bending > 0


def test_package_exports():
    assert surfgauge.__version__
    for name in ("Grid", "Embedding", "minimize_shape", "solve_von_karman", "buckling_comparison"):
        assert hasattr(surfgauge, name)
