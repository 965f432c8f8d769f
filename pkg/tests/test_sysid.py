import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.linear_model import Lasso

from robust_sls.core import SparsityPattern
from robust_sls.plant import PlantModel, Trajectory, make_chain, simulate
from robust_sls.sysid import (HARD_ZERO, LassoEstimate, LassoInputError, auto_c_lambda,
                              choose_lambda, critical_lambda, lasso_fit, lasso_objective, lasso_solve,
                              regression_data, soft_threshold, support_report)


@pytest.fixture(scope="module")
def traj():
    return simulate(make_chain(6, 0.2, scale=0.95, sigma_v=0.5), 400, seed=2)


def test_soft_threshold():
    assert soft_threshold(1.5, 0.5) == 1.0
    assert soft_threshold(-1.5, 0.5) == -1.0
    assert soft_threshold(0.3, 0.5) == 0.0


def test_full_shrinkage(traj):
    est = lasso_fit(traj, critical_lambda(traj) * 1.0001)
    assert not np.any(est.Ahat) and not np.any(est.Bhat)
    assert est.support.nnz == 0


def test_noiseless_least_squares_recovery():
    p = make_chain(4, 0.2, scale=0.9, sigma_w=0.0, sigma_v=1.0)
    tr = simulate(p, 40, seed=0)
    est = lasso_fit(tr, 0.0, tol=1e-12)
    assert np.abs(est.Ahat - p.A).max() <= 1e-8
    assert np.abs(est.Bhat - p.B).max() <= 1e-8


def test_matches_sklearn_lasso(traj):
    lam = 0.05
    est = lasso_fit(traj, lam, tol=1e-12)
    Z, Y = regression_data(traj)
    # ours: 0.5/(T-2) ||r||^2 + lam |b|_1 ; sklearn: 0.5/N ||r||^2 + a |b|_1 with N = T-1
    alpha = lam * (traj.T - 2) / Z.shape[0]
    for j in range(traj.n):
        ref = Lasso(alpha=alpha, fit_intercept=False, tol=1e-12, max_iter=100_000)
        ref.fit(Z, Y[:, j])
        ours = np.concatenate([est.Ahat[j], est.Bhat[j]])
        assert np.abs(ours - ref.coef_).max() <= 1e-6


def test_hard_zero_and_support(traj):
    est = lasso_fit(traj, 0.2)
    psi = np.hstack([est.Ahat, est.Bhat])
    assert np.all((psi == 0) | (np.abs(psi) >= HARD_ZERO))
    assert est.support == SparsityPattern.from_matrix(psi)
    assert est.all_converged and est.kkt_residual.max() <= 1e-8


def test_objective_not_beaten_by_perturbation(traj):
    lam = 0.1
    est = lasso_fit(traj, lam, tol=1e-12)
    f0 = lasso_objective(traj, est.Ahat, est.Bhat, lam)
    rng = np.random.default_rng(0)
    for _ in range(20):
        dA = 1e-3 * rng.normal(size=est.Ahat.shape)
        dB = 1e-3 * rng.normal(size=est.Bhat.shape)
        assert lasso_objective(traj, est.Ahat + dA, est.Bhat + dB, lam) >= f0 - 1e-12


def test_choose_lambda_examples():
    assert abs(choose_lambda(100, 5, 5, 0.1, 1.0) - 0.21460) < 1e-5
    assert choose_lambda(100, 5, 5, 0.1, 0.0) == 0.0
    assert math.isclose(choose_lambda(400, 5, 5, 0.1, 1.0),
                        0.5 * choose_lambda(100, 5, 5, 0.1, 1.0))
    with pytest.raises(LassoInputError):
        choose_lambda(10, 2, 2, 1.5, 1.0)


def test_support_report_examples():
    P = SparsityPattern(3, 4, [(0, 0), (1, 1), (2, 2), (0, 3), (1, 3)])
    assert support_report(P, P) == (True, 0, 0)
    assert support_report(SparsityPattern.empty(3, 4), P) == (False, 0, 5)


def test_negative_lambda(traj):
    with pytest.raises(LassoInputError):
        lasso_fit(traj, -1.0)


def test_roundtrip(traj):
    est = lasso_fit(traj, 0.1)
    back = LassoEstimate.from_dict(est.to_dict())
    assert np.array_equal(back.Ahat, est.Ahat) and back.support == est.support


def test_auto_c_lambda_is_positive(traj):
    c = auto_c_lambda(traj, 0.05)
    assert c > 0 and np.isfinite(c)


def test_dead_regressor_warns():
    p = PlantModel(0.5 * np.eye(2), np.ones((2, 1)), sigma_v=0.0)
    tr = simulate(p, 50, seed=0)
    with pytest.warns(UserWarning, match="zero-variance"):
        est = lasso_fit(tr, 0.01)
    assert not np.any(est.Bhat)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_deterministic_and_row_separable(seed, lam):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(31, 3))
    U = rng.normal(size=(30, 2))
    tr = Trajectory(X, U)
    a, b = lasso_fit(tr, lam), lasso_fit(tr, lam)
    assert np.array_equal(a.Ahat, b.Ahat) and np.array_equal(a.Bhat, b.Bhat)
    # each row is an independent problem
    Z, Y = regression_data(tr)
    full, *_ = lasso_solve(Z, Y, lam, 29)
    for j in range(3):
        single, *_ = lasso_solve(Z, Y[:, [j]], lam, 29)
        assert np.allclose(single[:, 0], full[:, j], atol=1e-7)
