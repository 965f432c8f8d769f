import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from robust_sls.core import (FirResponse, ShapeError, SparsityPattern, column_l1_budget,
                             e1_norm_bound, hinf_bound, hinf_grid_estimate, structure_counts)
from robust_sls.synthesis import build_constraints


def chain_pattern(n):
    return SparsityPattern.from_dense(np.abs(np.subtract.outer(range(n), range(n))) <= 1)


def bool_power(M, e):
    out = np.eye(M.shape[0], dtype=np.int64)
    for _ in range(e):
        out = (out @ M.astype(np.int64) > 0).astype(np.int64)
    return out > 0


masks = st.integers(1, 7).flatmap(
    lambda n: arrays(bool, (n, n), elements=st.booleans()))


def test_power_zero_is_identity():
    P = chain_pattern(5)
    assert P.power(0) == SparsityPattern.identity(5)


def test_power_one_and_four_on_chain():
    P = chain_pattern(5)
    assert P.power(1) == P
    assert P.power(4) == SparsityPattern.full(5, 5)


def test_compose_identity_and_union_idempotent():
    P = chain_pattern(6)
    assert SparsityPattern.identity(6) @ P == P
    assert P | P == P


def test_compose_shape_mismatch():
    with pytest.raises(ShapeError):
        SparsityPattern.identity(3) @ SparsityPattern.identity(4)


def test_index_out_of_range():
    with pytest.raises(ShapeError):
        SparsityPattern(2, 2, [(2, 0)])


def test_compose_chain_with_cx_matches_dense():
    n = 10
    sa = chain_pattern(n)
    Cx, _, _, _ = build_constraints(sa, SparsityPattern.identity(n), 3, 1, 3)
    got = sa @ Cx[1]
    ref = (sa.to_dense().astype(int) @ Cx[1].to_dense().astype(int)) > 0
    assert np.array_equal(got.to_dense(), ref)


@settings(max_examples=60, deadline=None)
@given(masks, st.integers(0, 5))
def test_power_matches_boolean_oracle(mask, e):
    P = SparsityPattern.from_dense(mask)
    assert np.array_equal(P.power(e).to_dense(), bool_power(mask, e))


@settings(max_examples=60, deadline=None)
@given(masks)
def test_algebra_closure_and_roundtrip(mask):
    P = SparsityPattern.from_dense(mask)
    Q = P.T
    assert np.array_equal(Q.to_dense(), mask.T)
    U = P | Q
    assert U.contains(P) and U.contains(Q)
    assert SparsityPattern.from_dict(P.to_dict()) == P
    rows, cols = P.coords
    assert np.all((rows >= 0) & (rows < P.rows) & (cols >= 0) & (cols < P.cols))


def test_large_compose_uses_sparse_path():
    n = 80
    P = chain_pattern(n)
    ref = (P.to_dense().astype(int) @ P.to_dense().astype(int)) > 0
    assert np.array_equal((P @ P).to_dense(), ref)


def test_counts_identity_patterns():
    I = SparsityPattern.identity(4)
    ab = SparsityPattern.from_dense(np.hstack([np.eye(4), np.zeros((4, 4))]) > 0)
    c = structure_counts(ab, [(I, SparsityPattern.empty(4, 4))], [I])
    assert (c.k, c.k_phi, c.k_v) == (1, 1, 1)


def test_counts_chain_d1():
    n = 6
    sa = chain_pattern(n)
    _, _, _, counts = build_constraints(sa, SparsityPattern.identity(n), 1, 1, 3)
    assert counts.k == 4
    assert counts.k_ab == 4


@pytest.mark.parametrize("seed", range(5))
def test_kv_bound_lemma(seed):
    rng = np.random.default_rng(seed)
    n = 12
    A = (rng.random((n, n)) < 0.2) | np.eye(n, dtype=bool)
    act = rng.random(n) < 0.6
    act[0] = True
    sb = SparsityPattern.from_dense(np.eye(n, dtype=bool)[:, act])
    _, _, _, c = build_constraints(SparsityPattern.from_dense(A), sb, 3, 2, 4)
    assert c.k_phi <= c.k
    assert c.k_v <= 2 * c.k ** 2


def test_fir_validation():
    with pytest.raises(ShapeError):
        FirResponse([np.eye(2), np.eye(3)])
    with pytest.raises(ValueError):
        FirResponse([np.ones((2, 2))], 1, [SparsityPattern.identity(2)])
    F = FirResponse([np.eye(2)] * 3, 1)
    assert F.length == 3 and list(F.lags) == [1, 2, 3]
    assert F.tap(7).sum() == 0.0


def test_column_l1_examples():
    assert np.array_equal(column_l1_budget(FirResponse([np.eye(2)])), [1, 1])
    F = FirResponse([np.array([[1.0, -2.0], [0.0, 3.0]])])
    assert np.array_equal(column_l1_budget(F), [1, 5])


@settings(max_examples=40, deadline=None)
@given(arrays(float, (2, 3, 3), elements=st.floats(-5, 5)), st.floats(-3, 3))
def test_column_l1_oracle_and_homogeneity(taps, c):
    F = FirResponse(list(taps))
    ref = np.abs(taps[0]).sum(axis=0) + np.abs(taps[1]).sum(axis=0)
    assert np.allclose(column_l1_budget(F), ref)
    assert np.allclose(column_l1_budget(F.scale(c)), abs(c) * ref)


def test_norm_examples():
    F = FirResponse([np.eye(3)])
    assert e1_norm_bound(F) == 1.0 and hinf_bound(F, 1) == 1.0
    assert e1_norm_bound(FirResponse([np.diag([2.0, 3.0])])) == 3.0


@settings(max_examples=30, deadline=None)
@given(arrays(float, (3, 4, 4), elements=st.floats(-2, 2)))
def test_hinf_bound_dominates_grid(taps):
    F = FirResponse(list(taps))
    assert hinf_bound(F) >= hinf_grid_estimate(F) - 1e-9


def test_fir_roundtrip():
    F = FirResponse([np.eye(2), 2 * np.eye(2)], 0, [SparsityPattern.identity(2)] * 2)
    G = FirResponse.from_dict(F.to_dict())
    assert G.start_lag == 0 and np.array_equal(G.stacked(), F.stacked())
