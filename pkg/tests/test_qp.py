import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import enumerate_qp
from robust_sls.qp import (QpInputError, QpProblem, QpStatus, solve_qp,
                           solve_strictly_convex_eq_qp)


def test_unconstrained():
    sol = solve_qp(QpProblem(np.eye(2)))
    assert sol.optimal
    assert np.allclose(sol.x, 0) and abs(sol.objective) < 1e-12


def test_single_bound():
    sol = solve_qp(QpProblem(np.eye(1), H1=[[-1.0]], h1=[-1.0]))
    assert sol.optimal
    assert abs(sol.x[0] - 1) < 1e-7 and abs(sol.objective - 0.5) < 1e-7


def test_eq_qp_examples():
    assert np.allclose(solve_strictly_convex_eq_qp(np.eye(2), [[1.0, 0.0]], [1.0]), [1, 0])
    x = solve_strictly_convex_eq_qp(np.diag([1.0, 2.0]), [[1.0, 1.0]], [2.0])
    assert np.allclose(x, [4 / 3, 2 / 3], atol=1e-12)
    # Lagrangian stationarity: Mx parallel to H'
    assert abs(x[0] * 1 - 2 * x[1]) < 1e-12
    assert np.allclose(solve_strictly_convex_eq_qp(np.eye(2), [[1.0, 1.0]], [0.0]), 0)


@pytest.mark.parametrize("seed", range(50))
def test_matches_active_set_enumeration(seed):
    rng = np.random.default_rng(seed)
    d, k = 6, 8
    G = rng.normal(size=(d, d))
    M = G @ G.T + 0.1 * np.eye(d)
    q = rng.normal(size=d)
    H1 = rng.normal(size=(k, d))
    h1 = rng.normal(size=k) + 0.5
    sol = solve_qp(QpProblem(M, H1, h1, q=q))
    ref = enumerate_qp(M, q, H1, h1)
    if not np.isfinite(ref):                 # no feasible active set
        assert sol.status is QpStatus.INFEASIBLE
        return
    assert sol.optimal
    assert abs(sol.objective - ref) <= 1e-6 * (1 + abs(ref))


def test_equality_and_inequality_mix():
    rng = np.random.default_rng(3)
    M = np.diag(rng.uniform(1, 2, 5))
    q = rng.normal(size=5)
    H2 = rng.normal(size=(2, 5))
    h2 = H2 @ rng.uniform(-0.2, 0.2, 5)
    H1 = np.vstack([np.eye(5), -np.eye(5)])
    h1 = np.full(10, 0.3)
    sol = solve_qp(QpProblem(M, sp.csr_matrix(H1), h1, H2, h2, q))
    assert sol.optimal
    assert np.abs(H2 @ sol.x - h2).max() < 1e-8
    assert (H1 @ sol.x - h1).max() < 1e-8


def test_infeasible_inequalities():
    sol = solve_qp(QpProblem(np.eye(2), H1=[[1, 0], [-1, 0]], h1=[-1, -1.0]))
    assert sol.status is QpStatus.INFEASIBLE


def test_inconsistent_equalities():
    sol = solve_qp(QpProblem(np.eye(2), H2=[[1, 1], [1, 1]], h2=[1, 2.0]))
    assert sol.status is QpStatus.INFEASIBLE


def test_dependent_equalities_are_dropped():
    sol = solve_qp(QpProblem(np.eye(2), H2=[[1, 1], [2, 2]], h2=[1, 2.0]))
    assert sol.optimal and np.allclose(sol.x, [0.5, 0.5], atol=1e-8)


def test_validation():
    with pytest.raises(QpInputError):
        QpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(QpInputError):
        QpProblem(-np.eye(2))
    with pytest.raises(QpInputError):
        QpProblem(np.eye(2), H1=np.ones((1, 3)), h1=[1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 10))
def test_optimal_status_implies_tolerances(seed, d, k):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(d, d))
    M = G @ G.T
    H1 = rng.normal(size=(k, d))
    h1 = np.abs(rng.normal(size=k))          # x = 0 is feasible
    q = rng.normal(size=d)
    # bounded: add a box
    H1 = np.vstack([H1, np.eye(d), -np.eye(d)])
    h1 = np.concatenate([h1, np.full(2 * d, 5.0)])
    sol = solve_qp(QpProblem(M, H1, h1, q=q), feas_tol=1e-8, gap_tol=1e-8)
    assert sol.optimal
    assert sol.residuals["primal"] <= 1e-8
    assert sol.residuals["gap"] <= 1e-8
    assert (H1 @ sol.x - h1).max() <= 1e-7
