import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfgrad.linalg import (
    DimensionError,
    NotPositiveDefinite,
    count_ops,
    cholesky,
    logdet,
    multiply,
    solve_spd,
    symmetrize,
)

from conftest import random_spd


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def cofactor_inverse(a):
    n = a.shape[0]
    cof = np.empty_like(a)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(a, i, 0), j, 1)
            cof[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return cof.T / np.linalg.det(a)


class TestMultiply:
    def test_identity(self, rng):
        A = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(multiply(np.eye(3), A), A)

    def test_hand_2x2(self):
        out = multiply(np.array([[1.0, 2], [3, 4]]), np.array([[0.0, 1], [1, 0]]))
        np.testing.assert_array_equal(out, [[2, 1], [4, 3]])

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
        np.testing.assert_allclose(multiply(a, b), naive_matmul(a, b), rtol=0, atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            multiply(np.ones((2, 3)), np.ones((2, 3)))

    def test_associative(self, rng):
        a, b, c = (rng.normal(size=(5, 5)) for _ in range(3))
        left = multiply(multiply(a, b), c)
        right = multiply(a, multiply(b, c))
        assert np.linalg.norm(left - right) <= 1e-12 * np.linalg.norm(left)

    def test_counter(self):
        with count_ops() as ops:
            multiply(np.ones((2, 3)), np.ones((3, 4)))
            multiply(np.ones((2, 3)), np.ones(3))
        assert ops.multiplies == 2 * 3 * 4 + 2 * 3
        # outside the block nothing is counted
        multiply(np.ones((2, 2)), np.ones((2, 2)))
        assert ops.multiplies == 30

    def test_counter_is_per_thread(self):
        seen = {}

        def worker():
            with count_ops() as ops:
                multiply(np.ones((3, 3)), np.ones((3, 3)))
            seen["other"] = ops.multiplies

        with count_ops() as ops:
            t = threading.Thread(target=worker)
            t.start()
            t.join()
        assert ops.multiplies == 0
        assert seen["other"] == 27


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(2)).lower, np.eye(2))

    def test_hand_2x2(self):
        np.testing.assert_allclose(cholesky(np.array([[4.0, 2], [2, 5]])).lower,
                                   [[2, 0], [1, 2]], rtol=0, atol=1e-15)

    def test_indefinite_reports_pivot(self):
        with pytest.raises(NotPositiveDefinite) as info:
            cholesky(np.array([[1.0, 2], [2, 1]]))
        assert info.value.pivot == 1

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))

    def test_positive_diagonal_and_reconstruction(self, rng):
        for _ in range(20):
            A = random_spd(rng, 6, 1.0, 1e6)
            L = cholesky(A).lower
            assert np.all(np.diag(L) > 0)
            np.testing.assert_array_equal(L, np.tril(L))
            assert np.linalg.norm(L @ L.T - A) <= 1e-12 * np.linalg.norm(A)


class TestSolveSpd:
    def test_identity(self, rng):
        b = rng.normal(size=(3, 2))
        np.testing.assert_allclose(solve_spd(cholesky(np.eye(3)), b), b, rtol=0, atol=0)

    def test_diagonal(self):
        x = solve_spd(cholesky(np.diag([4.0, 9.0])), np.array([[4.0], [9.0]]))
        np.testing.assert_allclose(x, [[1.0], [1.0]], rtol=1e-15)

    def test_matches_cofactor_inverse(self, rng):
        A = random_spd(rng, 6)
        b = rng.normal(size=(6, 3))
        np.testing.assert_allclose(solve_spd(cholesky(A), b), cofactor_inverse(A) @ b,
                                   rtol=1e-10, atol=1e-10)

    def test_residual_bound_ill_conditioned(self, rng):
        A = random_spd(rng, 6, 1.0, 1e8)
        b = rng.normal(size=6)
        x = solve_spd(cholesky(A), b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b) * np.linalg.norm(A)

    def test_self_solve_is_identity(self, rng):
        A = random_spd(rng, 5)
        np.testing.assert_allclose(solve_spd(cholesky(A), A), np.eye(5), atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            solve_spd(cholesky(np.eye(3)), np.ones(2))


class TestLogdetSymmetrize:
    @pytest.mark.parametrize("A, expected", [
        (np.eye(3), 0.0),
        (np.array([[4.0]]), np.log(4.0)),
        (np.diag([2.0, 3.0]), np.log(6.0)),
    ])
    def test_logdet(self, A, expected):
        assert logdet(cholesky(A)) == pytest.approx(expected, abs=1e-15)

    def test_symmetrize_examples(self):
        A = np.array([[1.0, 2.0], [2.0, 5.0]])
        np.testing.assert_array_equal(symmetrize(A), A)
        np.testing.assert_array_equal(symmetrize(np.array([[0.0, 2], [0, 0]])), [[0, 1], [1, 0]])

    def test_symmetrize_non_square(self):
        with pytest.raises(DimensionError):
            symmetrize(np.ones((2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_symmetrize_exact_and_idempotent(self, n, seed):
        A = np.random.default_rng(seed).normal(size=(n, n)) * 1e3
        S = symmetrize(A)
        assert np.array_equal(S, S.T)
        assert np.array_equal(symmetrize(S), S)
