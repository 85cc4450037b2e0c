import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_operator
from kronlearn.kron import (SampledKronOperator, choose_branch, edge_feature_operator, edge_kernel_operator,
                            explicit_sampled_kron_matvec, index_decompose, naive_sampled_kron_matvec,
                            sampled_kron_matvec, sampled_kron_matvec_transposed)


def _rel_err(x, ref):
    return np.max(np.abs(x - ref)) / (1.0 + np.max(np.abs(ref)))


@pytest.mark.parametrize("i,c,expected", [(0, 3, (0, 0)), (3, 3, (1, 0)), (5, 3, (1, 2))])
def test_index_decompose_examples(i, c, expected):
    assert index_decompose(i, c) == expected


@given(st.integers(1, 50), st.integers(1, 50), st.data())
def test_index_decompose_round_trip(a, c, data):
    i = data.draw(st.integers(0, a * c - 1))
    p, q = index_decompose(i, c, a)
    assert i == p * c + q and 0 <= p < a and 0 <= q < c


def test_index_decompose_rejects_out_of_range():
    with pytest.raises(IndexError):
        index_decompose(6, 3, a=2)
    with pytest.raises(IndexError):
        index_decompose(-1, 3)


def test_scalar_factors_accumulate_duplicate_columns():
    op = SampledKronOperator([[2.0]], [[3.0]], [0], [0], [0, 0], [0, 0])
    assert sampled_kron_matvec(op, [5.0, 7.0]).tolist() == [72.0]
    assert naive_sampled_kron_matvec(op, [5.0, 7.0]).tolist() == [72.0]


def test_identity_factors_give_identity():
    idx = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    op = SampledKronOperator(np.eye(2), np.eye(2), idx[:, 0], idx[:, 1], idx[:, 0], idx[:, 1])
    v = np.array([1.0, -2.0, 3.5, 4.0])
    np.testing.assert_array_equal(sampled_kron_matvec(op, v), v)
    np.testing.assert_array_equal(sampled_kron_matvec_transposed(op, v), v)


def test_oracle_equivalence_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        op = random_operator(rng)
        v = rng.uniform(-1, 1, size=op.shape[1])
        ref = naive_sampled_kron_matvec(op, v)
        assert _rel_err(sampled_kron_matvec(op, v), ref) <= 1e-10
        assert _rel_err(explicit_sampled_kron_matvec(op, v, block_rows=5), ref) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_branches_agree(seed):
    rng = np.random.default_rng(seed)
    op = random_operator(rng)
    v = rng.standard_normal(op.shape[1])
    t, s = sampled_kron_matvec(op, v, branch="T"), sampled_kron_matvec(op, v, branch="S")
    assert np.max(np.abs(t - s)) <= 1e-12 * (1.0 + np.max(np.abs(t)))


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    op = random_operator(rng)
    v1, v2 = rng.standard_normal((2, op.shape[1]))
    lhs = sampled_kron_matvec(op, alpha * v1 + beta * v2)
    rhs = alpha * sampled_kron_matvec(op, v1) + beta * sampled_kron_matvec(op, v2)
    assert _rel_err(lhs, rhs) <= 1e-10


@given(st.integers(0, 2**32 - 1))
def test_transpose_matches_oracle_and_adjoint(seed):
    rng = np.random.default_rng(seed)
    op = random_operator(rng)
    a, b, c, d, e, f = op.dims
    u = rng.standard_normal(f)
    v = rng.standard_normal(e)
    full = np.kron(op.M, op.N)[np.ix_(op.p * c + op.q, op.r * d + op.t)]
    assert _rel_err(sampled_kron_matvec_transposed(op, u), full.T @ u) <= 1e-10
    lhs = sampled_kron_matvec(op, v) @ u
    rhs = v @ sampled_kron_matvec_transposed(op, u)
    assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(lhs))


def test_branch_tie_goes_to_T():
    # a*e + d*f == c*e + b*f with all dims equal
    op = SampledKronOperator(np.ones((2, 2)), np.ones((2, 2)), [0], [0], [0], [0])
    assert choose_branch(op) == "T"


def test_branch_picks_cheaper_side():
    rng = np.random.default_rng(1)
    # huge a makes the T-path (a*e) expensive
    op = SampledKronOperator(rng.standard_normal((500, 2)), rng.standard_normal((2, 2)),
                             [0, 1], [0, 1], [0, 1], [0, 1])
    assert choose_branch(op) == "S"


def test_input_validation():
    with pytest.raises(IndexError):
        SampledKronOperator(np.eye(2), np.eye(2), [2], [0], [0], [0])
    with pytest.raises(ValueError):
        SampledKronOperator(np.eye(2), np.eye(2), [0, 1], [0], [0], [0])
    with pytest.raises(ValueError):
        SampledKronOperator(np.eye(2), np.eye(2), [], [], [0], [0])
    op = SampledKronOperator(np.eye(2), np.eye(2), [0], [0], [0], [0])
    with pytest.raises(ValueError):
        sampled_kron_matvec(op, [1.0, 2.0])
    with pytest.raises(ValueError):
        sampled_kron_matvec(op, [1.0], branch="X")


def test_naive_guard():
    op = SampledKronOperator(np.ones((40, 40)), np.ones((40, 40)), [0], [0], [0], [0])
    with pytest.raises(MemoryError):
        naive_sampled_kron_matvec(op, [1.0])
    with pytest.raises(MemoryError):
        explicit_sampled_kron_matvec(op, [1.0], max_entries=0)


def test_edge_kernel_operator_entries(rng):
    K = rng.standard_normal((4, 4))
    G = rng.standard_normal((3, 3))
    s1, e1 = np.array([0, 3, 2]), np.array([1, 1, 0])
    s2, e2 = np.array([1, 2]), np.array([2, 0])
    op = edge_kernel_operator(K, G, s1, e1, s2, e2)
    v = rng.standard_normal(2)
    expected = [sum(v[g] * K[s1[h], s2[g]] * G[e1[h], e2[g]] for g in range(2)) for h in range(3)]
    np.testing.assert_allclose(op.matvec(v), expected, rtol=1e-12)


def test_edge_feature_operator_is_bilinear_form(rng):
    D = rng.standard_normal((5, 2))
    T = rng.standard_normal((4, 3))
    s, e = np.array([0, 4, 2, 2]), np.array([3, 0, 1, 1])
    W = rng.standard_normal((3, 2))
    op = edge_feature_operator(D, T, s, e)
    expected = [T[e[h]] @ W @ D[s[h]] for h in range(4)]
    np.testing.assert_allclose(op.matvec(W.ravel()), expected, rtol=1e-12)
    # explicit Kronecker feature vectors t kron d
    X = np.array([np.kron(T[e[h]], D[s[h]]) for h in range(4)])
    g = rng.standard_normal(4)
    np.testing.assert_allclose(op.rmatvec(g), X.T @ g, rtol=1e-12)


def test_select_restricts_rows_and_columns(rng):
    op = random_operator(rng)
    f, e = op.shape
    rows = np.arange(0, f, 2)
    cols = np.arange(0, e, 3)
    v = rng.standard_normal(len(cols))
    full_v = np.zeros(e)
    full_v[cols] = v
    np.testing.assert_allclose(op.select(rows, cols).matvec(v), op.matvec(full_v)[rows], atol=1e-12)
