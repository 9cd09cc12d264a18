import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dime.linalg import (
    SvdConvergenceError,
    SvdFactors,
    concat_columns,
    format_matrix,
    frobenius_norm,
    orthonormality_error,
    parse_matrix,
    read_matrix,
    reconstruct,
    relative_error,
    split_columns,
    thin_svd,
    write_matrix,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
shapes = st.tuples(st.integers(1, 9), st.integers(1, 9))


def random_orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def test_identity_svd():
    f = thin_svd(np.eye(3))
    np.testing.assert_array_equal(f.u, np.eye(3))
    np.testing.assert_array_equal(f.sigma, [1, 1, 1])
    np.testing.assert_array_equal(f.vt, np.eye(3))


def test_diagonal_svd():
    f = thin_svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(f.sigma, [3, 1])
    for m in (f.u, f.vt):
        assert np.all(np.sort(np.abs(m), axis=None) == [0, 0, 1, 1])
    np.testing.assert_allclose(reconstruct(f), np.diag([3.0, 1.0]), atol=1e-15)


def test_diagonal_with_negative_entry_follows_sign_convention():
    f = thin_svd(np.diag([-2.0, 5.0]))
    np.testing.assert_allclose(f.sigma, [5, 2])
    assert np.all(f.u.max(axis=0) >= 0)
    np.testing.assert_allclose(reconstruct(f), np.diag([-2.0, 5.0]))


def test_random_8x16():
    a = np.random.default_rng(7).standard_normal((8, 16))
    f = thin_svd(a)
    assert f.u.shape == (8, 8) and f.vt.shape == (8, 16) and f.r == 8
    assert relative_error(reconstruct(f), a) <= 1e-10
    assert orthonormality_error(f.u) <= 1e-10
    assert orthonormality_error(f.vt.T) <= 1e-10


def test_rank_deficient_keeps_full_thin_rank():
    a = np.outer(np.arange(1.0, 6.0), np.ones(4))
    f = thin_svd(a)
    assert f.r == 4
    np.testing.assert_allclose(f.sigma[1:], 0, atol=1e-12)
    assert orthonormality_error(f.u) <= 1e-10
    assert orthonormality_error(f.vt.T) <= 1e-10
    assert relative_error(reconstruct(f), a) <= 1e-10


def test_zero_matrix():
    f = thin_svd(np.zeros((3, 5)))
    np.testing.assert_array_equal(f.sigma, 0)
    assert orthonormality_error(f.u) == 0
    assert orthonormality_error(f.vt.T) == 0


def test_nonfinite_rejected_with_index():
    a = np.ones((3, 3))
    a[1, 2] = np.nan
    with pytest.raises(ValueError, match=r"\(1, 2\)"):
        thin_svd(a)


def test_nonconvergence_reports_residual():
    a = np.random.default_rng(0).standard_normal((6, 6))
    with pytest.raises(SvdConvergenceError) as exc:
        thin_svd(a, max_sweeps=1)
    assert exc.value.off_norm > 0


def test_reconstruct_zero_sigma():
    f = SvdFactors(np.eye(2), np.zeros(2), np.eye(2))
    np.testing.assert_array_equal(reconstruct(f), np.zeros((2, 2)))


def test_reconstruct_shape_mismatch():
    with pytest.raises(ValueError):
        reconstruct(SvdFactors(np.eye(2), np.ones(3), np.eye(3)))


def test_concat_columns():
    np.testing.assert_array_equal(concat_columns([[1], [2]], [[3], [4]]), [[1, 3], [2, 4]])
    with pytest.raises(ValueError):
        concat_columns(np.ones((2, 1)), np.ones((3, 1)))


def test_concat_with_zero_keeps_left_block():
    a = np.random.default_rng(1).standard_normal((4, 3))
    c = concat_columns(a, np.zeros((4, 2)))
    assert np.array_equal(c[:, :3], a)


def test_split_concat_roundtrip():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((5, 4))
    left, right = split_columns(concat_columns(a, b), 3)
    assert np.array_equal(left, a) and np.array_equal(right, b)


def test_frobenius():
    assert frobenius_norm(np.zeros((2, 3))) == 0
    assert frobenius_norm(np.eye(5)) == pytest.approx(np.sqrt(5))
    assert frobenius_norm([[3.0, 4.0]]) == 5.0


def test_text_roundtrip_is_exact():
    a = np.random.default_rng(3).standard_normal((3, 4)) * 1e-7
    text = format_matrix(a)
    assert text.splitlines()[0] == "3 4"
    assert np.array_equal(parse_matrix(text), a)
    buf = io.StringIO()
    write_matrix(buf, a)
    buf.seek(0)
    assert np.array_equal(read_matrix(buf), a)


@settings(max_examples=60, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite)))
def test_reconstruction_property(a):
    f = thin_svd(a)
    assert relative_error(reconstruct(f), a) <= 1e-10
    assert orthonormality_error(f.u) <= 1e-10
    assert orthonormality_error(f.vt.T) <= 1e-10
    assert np.all(np.diff(f.sigma) <= 0) and np.all(f.sigma >= 0)


@settings(max_examples=40, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite)))
def test_transpose_has_same_singular_values(a):
    np.testing.assert_allclose(thin_svd(a).sigma, thin_svd(a.T).sigma, rtol=0, atol=1e-10 * max(1, np.abs(a).max()))


@settings(max_examples=40, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite)))
def test_sign_convention_and_determinism(a):
    f, g = thin_svd(a), thin_svd(a)
    assert np.array_equal(f.u, g.u) and np.array_equal(f.sigma, g.sigma) and np.array_equal(f.vt, g.vt)
    pivots = np.argmax(np.abs(f.u), axis=0)
    assert np.all(f.u[pivots, np.arange(f.r)] >= 0)


@pytest.mark.parametrize("seed", range(5))
def test_orthogonal_invariance(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((6, 9))
    s = thin_svd(a).sigma
    np.testing.assert_allclose(thin_svd(random_orthogonal(6, rng) @ a).sigma, s, atol=1e-10)
    np.testing.assert_allclose(thin_svd(a @ random_orthogonal(9, rng)).sigma, s, atol=1e-10)


def test_matches_lapack_singular_values():
    a = np.random.default_rng(11).standard_normal((20, 13))
    np.testing.assert_allclose(thin_svd(a).sigma, np.linalg.svd(a, compute_uv=False), atol=1e-12)
