import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from radarfield.matching import (R_EPS, build_cost_matrix, chamfer, emd, gospa,
                                 linear_assignment, pairwise_distances, solve_assignment)
from oracles.sets import (brute_assignment_cost, chamfer_loop, emd_oracle, gospa_oracle,
                          gospa_partial_oracle)


def _column_order_cost(C, A):
    order = np.argsort(A.truth_index)
    c = C[A.pred_index[order], A.truth_index[order]]
    total = c[0]
    for v in c[1:]:
        total += v
    return float(total)


def test_build_cost_matrix_example():
    C = build_cost_matrix([[2.0, 0, 0], [5.0, 5.0, 5.0]], [0.5, 0.9], [[0.0, 0, 0]])
    assert C[0, 0] == pytest.approx(2 + np.log(2))
    assert C[0, 0] == pytest.approx(2.6931, abs=1e-4)


def test_build_cost_matrix_clamps_and_checks():
    C = build_cost_matrix(np.zeros((2, 3)), [0.0, 1.0], np.ones((1, 3)))
    assert np.all(np.isfinite(C))
    assert C[0, 0] == pytest.approx(np.sqrt(3) - np.log(R_EPS))
    with pytest.raises(ValueError):
        build_cost_matrix(np.zeros((2, 3)), [0.5, 0.5], np.zeros((2, 3)))


def test_solve_assignment_against_brute_force_7x4():
    rng = np.random.default_rng(0)
    for _ in range(100):
        C = rng.normal(size=(7, 4))
        A = solve_assignment(C)
        assert sorted(A.truth_index) == [0, 1, 2, 3]
        assert len(set(A.pred_index)) == 4
        assert sorted(set(A.unmatched) | set(A.pred_index)) == list(range(7))
        assert _column_order_cost(C, A) == brute_assignment_cost(C)


def test_solver_agrees_with_scipy_on_larger_problems():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.integers(1, 40)
        m = rng.integers(n, 60)
        C = rng.exponential(size=(n, m))
        rows = linear_assignment(C)
        r, c = linear_sum_assignment(C)
        assert C[np.arange(n), rows].sum() == pytest.approx(C[r, c].sum(), rel=1e-12)


def test_solver_prefers_lowest_column_on_ties():
    assert list(linear_assignment(np.zeros((1, 4)))) == [0]
    assert list(linear_assignment(np.ones((2, 3)))) == [0, 1]


def test_solver_rejects_bad_input():
    with pytest.raises(ValueError):
        linear_assignment(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        linear_assignment(np.array([[np.inf]]))


def test_empty_truth_assignment():
    A = solve_assignment(np.zeros((3, 0)))
    assert len(A.pairs) == 0 and list(A.unmatched) == [0, 1, 2]


def test_chamfer_examples():
    rng = np.random.default_rng(2)
    for _ in range(100):
        X = rng.normal(size=(rng.integers(1, 6), 3))
        Y = rng.normal(size=(rng.integers(1, 6), 3))
        assert chamfer(X, Y) == pytest.approx(chamfer_loop(X, Y), abs=1e-12)
    P = rng.normal(size=(4, 3))
    assert chamfer(P, P) == 0.0
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), P)


def test_emd_examples():
    rng = np.random.default_rng(3)
    for _ in range(50):
        X = rng.normal(size=(4, 3))
        Y = rng.normal(size=(4, 3))
        assert emd(X, Y) == pytest.approx(emd_oracle(X, Y), abs=1e-12)
    for _ in range(50):
        X = rng.normal(size=(rng.integers(1, 6), 3))
        Y = rng.normal(size=(rng.integers(1, 6), 3))
        assert emd(X, Y) == pytest.approx(emd_oracle(X, Y), abs=1e-9)


def test_gospa_examples():
    Y = np.zeros((3, 3))
    assert gospa(np.zeros((0, 3)), Y).total == pytest.approx(1.5)
    res = gospa([[0.0, 0, 0]], [[0.0, 0, 0], [10.0, 0, 0]])
    assert res.total == pytest.approx(0.5)
    assert (res.num_assigned, res.num_missed, res.num_false) == (1, 1, 0)
    assert gospa(np.zeros((0, 3)), np.zeros((0, 3))).total == 0.0


def test_gospa_pair_at_cutoff_counts_as_miss_and_false():
    res = gospa([[0.0, 0, 0]], [[1.0, 0, 0]], c=1.0)
    assert res.total == pytest.approx(1.0)
    assert (res.num_assigned, res.num_missed, res.num_false) == (0, 1, 1)


@pytest.mark.parametrize("c, alpha, p", [(1.0, 2.0, 1.0), (2.5, 2.0, 2.0), (1.5, 1.0, 1.0),
                                         (0.7, 0.5, 3.0)])
def test_gospa_against_enumeration(c, alpha, p):
    rng = np.random.default_rng(4)
    for _ in range(60):
        X = rng.normal(size=(rng.integers(0, 5), 3))
        Y = rng.normal(size=(rng.integers(0, 5), 3))
        assert gospa(X, Y, c, alpha, p).total == pytest.approx(gospa_oracle(X, Y, c, alpha, p),
                                                               abs=1e-9)
        if alpha == 2.0:
            assert gospa(X, Y, c, alpha, p).total == pytest.approx(
                gospa_partial_oracle(X, Y, c, alpha, p), abs=1e-9)


def test_gospa_decomposition_sums():
    rng = np.random.default_rng(5)
    for _ in range(100):
        X = rng.normal(size=(rng.integers(0, 6), 3))
        Y = rng.normal(size=(rng.integers(0, 6), 3))
        g = gospa(X, Y, c=1.2)
        assert g.total == pytest.approx(g.localization + g.missed + g.false, abs=1e-12)
        assert g.num_assigned + g.num_missed == len(Y)
        assert g.num_assigned + g.num_false == len(X)


def test_gospa_parameter_checks():
    with pytest.raises(ValueError):
        gospa(np.zeros((1, 3)), np.zeros((1, 3)), c=0.0)
    with pytest.raises(ValueError):
        gospa(np.zeros((1, 3)), np.zeros((1, 3)), alpha=3.0)


pts = st.lists(st.tuples(*[st.floats(-50, 50)] * 3), min_size=1, max_size=5)


@settings(max_examples=150, deadline=None)
@given(pts, pts, pts)
def test_metric_properties(a, b, c):
    X, Y, Z = (np.array(v, float) for v in (a, b, c))
    for f in (chamfer, emd):
        assert f(X, Y) == pytest.approx(f(Y, X), abs=1e-9)
        assert f(X, Y) >= 0
    g = lambda U, V: gospa(U, V, c=3.0).total
    assert g(X, Y) == pytest.approx(g(Y, X), abs=1e-9)
    assert g(X, Z) <= g(X, Y) + g(Y, Z) + 1e-9
    assert emd(X, Z) <= emd(X, Y) + emd(Y, Z) + 1e-9


def test_pairwise_distances_shape():
    D = pairwise_distances(np.zeros((2, 3)), np.ones((4, 3)))
    assert D.shape == (2, 4)
    np.testing.assert_allclose(D, np.sqrt(3))
