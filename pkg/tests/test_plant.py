import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_sls.plant import (PlantInputError, PlantModel, UnstableError,
                              assumption1_diagnostics, dare, dare_gain, dlyap, make_chain,
                              make_rng, perturb, simulate, spectral_radius, stationary_cov)


def test_chain_n3():
    p = make_chain(3, 0.2)
    assert np.allclose(p.A, [[0.8, 0.2, 0], [0.2, 0.6, 0.2], [0, 0.2, 0.8]])
    assert np.array_equal(p.B, np.eye(3))
    assert np.array_equal(p.Q, np.eye(3)) and np.array_equal(p.R, np.eye(3))


def test_chain_n8_row_sums(chain8):
    sums = chain8.A.sum(axis=1)
    assert np.allclose(sums[1:-1], 1.05)
    # end rows follow D_1 + 1 from the end-node formula
    assert np.allclose(sums[[0, -1]], 0.05 - 1 / 3 + 1)
    assert spectral_radius(chain8.A) > 1.0


def test_chain_n40_is_stable():
    assert spectral_radius(make_chain(40, 0.2, scale=0.99).A) < 1


def test_actuation_mask():
    p = make_chain(5, 0.2, actuated=[True, False, True, False, False])
    assert p.B.shape == (5, 2) and p.B[0, 0] == 1 and p.B[2, 1] == 1
    with pytest.raises(PlantInputError):
        make_chain(5, 0.2, actuated=[False] * 5)


def test_model_validation():
    with pytest.raises(PlantInputError):
        PlantModel(np.eye(2), np.ones((3, 1)))
    with pytest.raises(PlantInputError):
        PlantModel(np.eye(2), np.ones((2, 1)), Q=-np.eye(2))
    p = PlantModel(np.eye(2), np.ones((2, 1)))
    with pytest.raises(ValueError):
        p.A[0, 0] = 3.0


def test_plant_roundtrip():
    p = make_chain(4, 0.25, sigma_v=0.3)
    q = PlantModel.from_dict(p.to_dict())
    assert q == p and q.model_hash() == p.model_hash()


def test_zero_noise_zero_state():
    p = make_chain(4, 0.2, scale=0.9, sigma_w=0.0, sigma_v=0.0)
    tr = simulate(p, 50, seed=1, init_from_stationary=False)
    assert not np.any(tr.states) and not np.any(tr.inputs)


def test_simulation_is_deterministic():
    p = make_chain(4, 0.2, scale=0.9)
    a, b = simulate(p, 30, seed=5), simulate(p, 30, seed=5)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.inputs, b.inputs)
    assert not np.array_equal(a.states, simulate(p, 30, seed=6).states)


def test_unstable_stationary_start():
    with pytest.raises(UnstableError):
        simulate(make_chain(3, 0.2, scale=1.2), 10)


def test_perturb_keeps_zeros_and_range():
    A = make_chain(6, 0.2).A
    Ah = perturb(A, 0.1, make_rng(0))
    assert np.array_equal(Ah == 0, A == 0)
    assert np.all(np.abs(Ah - A) <= 0.1 * np.abs(A) + 1e-15)


def test_dlyap_examples():
    W = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert np.allclose(dlyap(np.zeros((2, 2)), W), W)
    assert abs(dlyap([[0.5]], [[1.0]])[0, 0] - 4 / 3) < 1e-12
    with pytest.raises(UnstableError):
        dlyap([[1.0]], [[1.0]])


@pytest.mark.parametrize("seed", range(3))
def test_dlyap_series_oracle(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(4, 4))
    F *= 0.9 / spectral_radius(F)
    G = rng.normal(size=(4, 4))
    W = G @ G.T
    ref = np.zeros((4, 4))
    Ft = np.eye(4)
    for _ in range(500):
        ref += Ft @ W @ Ft.T
        Ft = Ft @ F
    assert np.abs(dlyap(F, W) - ref).max() <= 1e-8 * max(1, np.abs(ref).max())


def test_stationary_cov_collapse():
    p = make_chain(3, 0.2, scale=0.9, sigma_v=0.5)
    M = stationary_cov(p)
    P = dlyap(p.A, np.eye(3) + 0.25 * p.B @ p.B.T)
    assert np.allclose(M[:3, :3], P) and np.allclose(M[3:, 3:], 0.25 * np.eye(3))
    assert np.allclose(M[:3, 3:], 0)
    z = PlantModel(np.zeros((2, 2)), np.eye(2), sigma_w=1.5, sigma_v=0.0)
    assert np.allclose(stationary_cov(z)[:2, :2], 2.25 * np.eye(2))


def test_stationary_cov_monte_carlo():
    p = make_chain(3, 0.2, scale=0.9, sigma_v=0.7)
    tr = simulate(p, 100_000, seed=11)
    Z = np.hstack([tr.states[:-1], tr.inputs])
    emp = Z.T @ Z / Z.shape[0]
    M = stationary_cov(p)
    assert np.linalg.norm(emp - M) <= 0.05 * np.linalg.norm(M)


def test_dare_scalar_golden_ratio():
    P = dare(np.eye(1), np.eye(1), np.eye(1), np.eye(1))
    assert abs(P[0, 0] - (1 + math.sqrt(5)) / 2) < 1e-9


def test_dare_zero_dynamics():
    p = PlantModel(np.zeros((2, 2)), np.eye(2), Q=np.diag([2.0, 3.0]))
    K, P = dare_gain(p, return_P=True)
    assert np.allclose(P, p.Q) and np.allclose(K, 0)


@pytest.mark.parametrize("seed", range(3))
def test_dare_residual(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4))
    A *= 0.95 / spectral_radius(A)
    B = rng.normal(size=(4, 2))
    Q, R = np.eye(4), np.eye(2)
    P = dare(A, B, Q, R)
    res = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A) - P
    assert np.abs(res).max() <= 1e-9


def test_assumption1_identity():
    psi = np.vstack([np.eye(3), np.zeros((2, 3))])
    psi[0, 0] = 0.2
    d = assumption1_diagnostics(np.eye(5), psi)
    assert d["incoherence"] == 0 and d["r"] == 1
    assert d["C_min"] == 1 and d["D_max"] == 1
    assert abs(d["Psi_min"] - 0.2) < 1e-15


def test_assumption1_brute_force(chain8):
    p = make_chain(8, 0.2, scale=0.95)
    M = stationary_cov(p)
    psi = np.hstack([p.A, p.B]).T
    d = assumption1_diagnostics(M, psi)
    inco, cmin = 0.0, np.inf
    for j in range(8):
        S = [i for i in range(16) if psi[i, j] != 0]
        for i in set(range(16)) - set(S):
            inco = max(inco, np.abs(np.linalg.solve(M[np.ix_(S, S)], M[i, S])).sum())
        cmin = min(cmin, np.linalg.eigvalsh(M[np.ix_(S, S)]).min())
    assert abs(d["incoherence"] - inco) < 1e-10 and abs(d["C_min"] - cmin) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.floats(0.05, 0.45), st.floats(0.5, 0.99))
def test_chain_structure_property(n, a, scale):
    A = make_chain(n, a, scale=scale).A
    assert np.allclose(A, A.T)
    assert np.count_nonzero(np.triu(A, 2)) == 0
    # graph Laplacian form: rows sum to the scale factor
    assert np.allclose(A.sum(axis=1), scale)
