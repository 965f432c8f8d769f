import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from conftest import random_instance
from robust_sls.core import SparsityPattern
from robust_sls.plant import make_chain
from robust_sls.qp import solve_qp, solve_strictly_convex_eq_qp
from robust_sls.synthesis import (SynthesisInputError, SynthesisProblem, SynthesisSolution,
                                  build_column, build_constraints, build_subproblem, eval_g,
                                  full_g, gamma0, golden_section, golden_section_synthesize,
                                  locality_exponent, max_golden_iterations)


def residuals(problem, sol):
    """Max-abs violations of the achievability equations."""
    A, B = problem.Ahat, problem.Bhat
    X, U, V = sol.phi_x, sol.phi_u, sol.v
    L, n = problem.L, problem.n
    out = [np.abs(X.tap(1) - np.eye(n) - V.tap(0)).max()]
    for t in range(1, L):
        out.append(np.abs(X.tap(t + 1) - A @ X.tap(t) - B @ U.tap(t) - V.tap(t)).max())
    out.append(np.abs(A @ X.tap(L) + B @ U.tap(L) + V.tap(L)).max())
    return max(out)


def column_budgets(problem, sol):
    eps = problem.eps_bar
    resp = eps * (np.abs(sol.phi_x.stacked()).sum(axis=(0, 1))
                  + np.abs(sol.phi_u.stacked()).sum(axis=(0, 1)))
    vb = np.abs(sol.v.stacked()).sum(axis=(0, 1))
    return resp, vb


def test_locality_d1_is_identity():
    sa = SparsityPattern.from_matrix(make_chain(6, 0.2).A)
    Cx, _, _, _ = build_constraints(sa, SparsityPattern.identity(6), 1, 1, 4)
    assert all(p == SparsityPattern.identity(6) for p in Cx)


def test_exponent_sequence():
    assert [locality_exponent(t, 5, 4) for t in range(1, 5)] == [0, 4, 4, 4]


def test_cv_brute_force():
    rng = np.random.default_rng(0)
    n = 8
    A = make_chain(n, 0.2).A
    mask = np.array([1, 0, 1, 1, 0, 1, 0, 1], bool)
    B = np.eye(n)[:, mask]
    Cx, Cu, Cv, _ = build_constraints(SparsityPattern.from_matrix(A),
                                      SparsityPattern.from_matrix(B), 3, 2, 3)
    for t in range(1, 4):
        acc = np.zeros((n, n), bool)
        for _ in range(20):
            X = rng.normal(size=(n, n)) * Cx[t - 1].to_dense()
            Uu = rng.normal(size=(B.shape[1], n)) * Cu[t - 1].to_dense()
            acc |= np.abs(A @ X + B @ Uu) > 0
        assert np.array_equal(acc, Cv[t].to_dense())
    assert Cv[0] == SparsityPattern.identity(n)


def test_smallest_instance():
    prob = SynthesisProblem.from_plant([[0.5]], [[1.0]], 0.0, 1, d=None)
    stc = build_column(prob, 0)
    kinds = sorted((k, lag) for k, lag, _ in stc.index)
    assert kinds == [("u", 1), ("v", 0), ("v", 1), ("x", 1)]
    H = stc.H2.toarray()[:, :4]
    order = [stc.index.index(k) for k in [("x", 1, 0), ("u", 1, 0), ("v", 0, 0),
                                             ("v", 1, 0)]]
    # Phi_x(1) - V(0) = 1 and a Phi_x(1) + b Phi_u(1) + V(1) = 0
    assert np.allclose(H[:, order], [[1, 0, -1, 0], [0.5, 1, 0, 1]])
    assert np.allclose(stc.h2, [1, 0])


def test_problem_validation():
    A = make_chain(4, 0.2).A
    with pytest.raises(SynthesisInputError):
        SynthesisProblem.from_plant(A, np.eye(4), 0.0, 3, alpha=1.5)
    with pytest.raises(SynthesisInputError):
        SynthesisProblem.from_plant(A, np.eye(4), -0.1, 3)
    p = SynthesisProblem.from_plant(A, np.eye(4), 0.0, 3)
    bad = [SparsityPattern.full(4, 4)] + list(p.Cv[1:])
    with pytest.raises(SynthesisInputError):
        SynthesisProblem(p.Ahat, p.Bhat, 0.0, 0.5, 3, p.Cx, p.Cu, bad, p.counts)


@pytest.mark.parametrize("seed", range(6))
def test_feasible_solution_invariants(seed):
    n = 4 + seed % 3
    _, prob = random_instance(seed, n, 4, eps=0.005 * (seed % 2))
    sol = golden_section_synthesize(prob)
    assert sol.feasible
    assert residuals(prob, sol) <= 1e-6
    resp, vb = column_budgets(prob, sol)
    assert np.all(resp <= prob.response_budget_rate * sol.gamma_bar + 1e-6)
    assert np.all(vb <= prob.v_budget_rate * sol.gamma_bar + 1e-6)
    for t, (X, Uu) in enumerate(zip(sol.phi_x.taps, sol.phi_u.taps)):
        assert prob.Cx[t].supports(X) and prob.Cu[t].supports(Uu)
    for t, V in enumerate(sol.v.taps):
        assert prob.Cv[t].supports(V)
    assert abs(sol.g - math.sqrt(np.sum(sol.column_objectives ** 2))) <= 1e-8
    assert sol.certificate["bound"] <= sol.gamma_bar + 1e-6
    assert sol.iterations <= max_golden_iterations(prob.eta1)


@pytest.mark.parametrize("seed", range(4))
def test_reduced_equals_unreduced(seed):
    _, prob = random_instance(seed, 5, 3, eps=0.004)
    for j in range(prob.n):
        a, _ = build_subproblem(prob, j, 0.8, reduced=True)
        b, _ = build_subproblem(prob, j, 0.8, reduced=False)
        sa, sb = solve_qp(a, 1e-10, 1e-11, 200), solve_qp(b, 1e-10, 1e-11, 200)
        assert sa.optimal and sb.optimal
        assert abs(sa.objective - sb.objective) <= 1e-6 * (1 + abs(sb.objective))


@pytest.mark.parametrize("seed", range(3))
def test_decomposition_matches_full_qp(seed):
    _, prob = random_instance(seed, 4, 3, eps=0.003)
    g, _ = eval_g(prob, 0.7, eta2=1e-11)
    assert math.isfinite(g)
    assert abs(g - full_g(prob, 0.7)) <= 1e-6 * (1 + g)


def test_g_monotone_and_gamma0():
    _, prob = random_instance(1, 5, 4, eps=0.01)
    g0 = gamma0(prob).max()
    grid = np.linspace(max(g0, 1e-3) * 1.001, 1.0, 8)
    vals = [eval_g(prob, g)[0] for g in grid]
    assert all(b <= a + 1e-7 * (1 + a) for a, b in zip(vals, vals[1:]))
    if g0 > 1e-3:
        assert eval_g(prob, 0.5 * g0)[0] == math.inf


def test_infeasible_returns_status():
    # large eps: response budget cannot hold Phi_x(1) = I
    _, prob = random_instance(0, 4, 3, eps=2.0)
    sol = golden_section_synthesize(prob)
    assert sol.status == "infeasible" and not sol.feasible


def test_eps_zero_gamma_zero_is_truncated_lqr():
    n, L = 3, 6
    A = make_chain(n, 0.2, scale=0.9).A
    B = np.eye(n)
    prob = SynthesisProblem.from_plant(A, B, 0.0, L, d=None)
    g, _ = eval_g(prob, 0.0, eta2=1e-12)
    # V = 0: independent Kronecker-form equality QP over vec(Phi_x), vec(Phi_u)
    nx = n * n
    I = np.eye(n)
    blocks = []
    rhs = []
    dim = 2 * nx * L
    for t in range(L + 1):
        row = np.zeros((nx, dim))
        if t == 0:
            row[:, :nx] = np.eye(nx)
            rhs.append(I.ravel(order="F"))
        else:
            if t < L:
                row[:, 2 * nx * t:2 * nx * t + nx] = np.eye(nx)
            s = -1.0 if t < L else 1.0
            row[:, 2 * nx * (t - 1):2 * nx * (t - 1) + nx] = s * np.kron(I, A)
            row[:, 2 * nx * (t - 1) + nx:2 * nx * t] = s * np.kron(I, B)
            rhs.append(np.zeros(nx))
        blocks.append(row)
    x = solve_strictly_convex_eq_qp(2 * np.eye(dim), np.vstack(blocks), np.concatenate(rhs))
    assert abs(g - math.sqrt(x @ x)) <= 1e-6


def test_workers_give_identical_results():
    _, prob = random_instance(2, 6, 3, eps=0.004)
    a = golden_section_synthesize(prob, workers=1)
    b = golden_section_synthesize(prob.with_eps(prob.eps_bar), workers=3)
    assert a.gamma_bar == b.gamma_bar and a.g == b.g
    assert np.array_equal(a.phi_x.stacked(), b.phi_x.stacked())


def test_roundtrips():
    _, prob = random_instance(0, 4, 3, eps=0.002)
    sol = golden_section_synthesize(prob)
    back = SynthesisSolution.from_dict(sol.to_dict())
    assert back.gamma_bar == sol.gamma_bar
    assert np.array_equal(back.v.stacked(), sol.v.stacked())
    p2 = SynthesisProblem.from_dict(prob.to_dict())
    assert p2.Cv == prob.Cv and np.array_equal(p2.Ahat, prob.Ahat)


def _surrogate(a, b):
    g = lambda x: a / (x + b)
    F = lambda x: g(x) / (1 - x)
    return F, minimize_scalar(F, bounds=(0, 1 - 1e-9), method="bounded",
                              options={"xatol": 1e-12}).x


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.01, 2.0), st.sampled_from([1e-2, 1e-3, 1e-4]))
def test_golden_surrogate(a, b, eta1):
    F, star = _surrogate(a, b)
    gbar, it = golden_section(F, eta1)
    assert abs(gbar - star) <= eta1 / 2
    assert it <= max_golden_iterations(eta1)
