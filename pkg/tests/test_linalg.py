import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pretrainlab.errors import ConvergenceError, DimensionError, ValidationError
from pretrainlab.linalg import (frobenius, matmul, norm_21, norm_report, relu, softmax_rows,
                                spectral_norm)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def matrices(max_side=6):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        m = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_annihilator(self):
        m = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(matmul(m, np.zeros((4, 2))), np.zeros((3, 2)))

    def test_matches_triple_loop_exactly(self):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        assert np.array_equal(matmul(a, b), triple_loop(a, b))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_triple_loop_property(self, n, k, m, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((n, k)), rng.standard_normal((k, m))
        assert np.array_equal(matmul(a, b), triple_loop(a, b))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            matmul(np.array([[np.nan]]), np.ones((1, 1)))


class TestSpectralNorm:
    def test_diagonal(self):
        assert spectral_norm(np.diag([2.0, 1.0])) == pytest.approx(2.0, rel=1e-12)

    def test_zero(self):
        assert spectral_norm(np.zeros((3, 2))) == 0.0

    def test_against_eigensolver(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((5, 4))
        oracle = math.sqrt(scipy.linalg.eigvalsh(m.T @ m)[-1])
        assert abs(spectral_norm(m) - oracle) / oracle < 1e-8

    def test_start_vector_orthogonal_to_top_direction(self):
        # MᵀM annihilates the all-ones start vector
        m = np.array([[1.0, -1.0], [1.0, -1.0]])
        assert spectral_norm(m) == pytest.approx(2.0, rel=1e-10)

    def test_non_convergence_reports_gap(self):
        m = np.diag([1.0, 0.999999])
        with pytest.raises(ConvergenceError) as info:
            spectral_norm(m, tol=1e-15, max_iter=3)
        assert info.value.iterations == 3
        assert info.value.gap > 0

    def test_bad_tol(self):
        with pytest.raises(ValidationError):
            spectral_norm(np.eye(2), tol=0.0)

    @settings(max_examples=100, deadline=None)
    @given(matrices(), st.floats(-10, 10, allow_nan=False))
    def test_homogeneity(self, m, c):
        s = spectral_norm(m)
        assert spectral_norm(c * m) == pytest.approx(abs(c) * s, rel=1e-6, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(matrices())
    def test_norm_ordering(self, m):
        r = norm_report(m)
        slack = 1e-9 * max(1.0, r.two_one)
        assert r.spectral <= r.frobenius + slack
        assert r.frobenius <= r.two_one + slack

    @settings(max_examples=50, deadline=None)
    @given(matrices())
    def test_matches_svd(self, m):
        top = np.linalg.svd(m, compute_uv=False)[0]
        assert spectral_norm(m) == pytest.approx(top, rel=1e-6, abs=1e-9)


class TestNorm21:
    def test_identity(self):
        assert norm_21(np.eye(5)) == 5.0

    def test_zero(self):
        assert norm_21(np.zeros((2, 3))) == 0.0

    def test_hand_case(self):
        assert norm_21(np.array([[3.0, 4.0], [0.0, 0.0]])) == 5.0

    def test_column_convention(self):
        m = np.array([[3.0, 0.0], [4.0, 0.0]])
        assert norm_21(m, axis="cols") == 5.0
        assert norm_21(m) == 7.0
        with pytest.raises(ValidationError):
            norm_21(m, axis="diag")

    def test_frobenius(self):
        assert frobenius(np.array([[3.0, 4.0]])) == 5.0


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax_rows(np.zeros((1, 4))), 0.25, atol=0, rtol=1e-15)

    def test_hand_case(self):
        out = softmax_rows(np.array([[0.0, math.log(3.0)]]))
        assert np.allclose(out, [[0.25, 0.75]], rtol=0, atol=1e-15)

    def test_no_overflow(self):
        out = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out)) and out[0, 0] == pytest.approx(1.0)

    @settings(max_examples=100, deadline=None)
    @given(matrices(), finite)
    def test_rows_and_shift_invariance(self, m, c):
        s = softmax_rows(m)
        assert np.all((s >= 0) & (s <= 1))
        assert np.allclose(s.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.allclose(softmax_rows(m + c), s, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(matrices())
def test_relu_elementwise_and_idempotent(m):
    r = relu(m)
    assert np.array_equal(r, np.maximum(m, 0.0))
    assert np.array_equal(relu(r), r)


def test_nudge_in_null_space_falls_back():
    # both the all-ones start and the first-coordinate nudge are annihilated
    m = np.array([[0.0, 1.0, -1.0]])
    assert spectral_norm(m) == pytest.approx(math.sqrt(2.0), rel=1e-10)


def test_tiny_and_huge_scales():
    assert spectral_norm(np.array([[3e-300, 0.0], [0.0, 4e-300]])) == pytest.approx(4e-300)
    assert spectral_norm(np.array([[3e300, 0.0], [0.0, 4e300]])) == pytest.approx(4e300)
