import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalvit.decomp import (
    hosvd,
    hosvd_reconstruct,
    svd_reconstruct,
    truncated_svd,
)


def gram_singular_values(m):
    """Oracle: singular values via the symmetric eigendecomposition of M^T M."""
    eigvals = np.linalg.eigh(m.T @ m)[0]
    return np.sqrt(np.clip(eigvals, 0.0, None))[::-1]


def test_rank1_outer_product_exact():
    u = np.array([1.0, 2.0, -1.0])
    v = np.array([3.0, 0.5])
    m = np.outer(u, v)
    r = truncated_svd(m, rank=1)
    assert r.rank == 1
    np.testing.assert_allclose(svd_reconstruct(r), m, atol=1e-12)
    assert r.singular_values[0] == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v))


def test_identity_singular_values():
    r = truncated_svd(np.eye(3), rank=3)
    np.testing.assert_allclose(r.singular_values, [1.0, 1.0, 1.0], atol=1e-12)


def test_singular_values_match_gram_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = rng.standard_normal((10, 5))
        r = truncated_svd(m, rank=5)
        expected = gram_singular_values(m)
        np.testing.assert_allclose(r.singular_values, expected, rtol=1e-6)


def test_truncation_error_identity():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((12, 8))
    for n in range(1, 8):
        r = truncated_svd(m, rank=n)
        err = np.linalg.norm(m - svd_reconstruct(r))
        expected = np.linalg.norm(r.dropped)
        assert err == pytest.approx(expected, rel=1e-5)


def test_tolerance_mode_keeps_large_values():
    u = np.linalg.qr(np.random.default_rng(0).standard_normal((8, 8)))[0]
    v = np.linalg.qr(np.random.default_rng(1).standard_normal((6, 6)))[0]
    s = np.array([10.0, 5.0, 1.0, 0.01, 0.001, 0.0001])
    m = u[:, :6] @ np.diag(s) @ v.T
    r = truncated_svd(m, tol=0.05)
    assert r.rank == 3  # keeps sigma/sigma_1 in {1, 0.5, 0.1}, drops <= 0.001
    r_all = truncated_svd(m, tol=0.0)
    assert r_all.rank == 6


def test_zero_matrix_reconstructs_zero():
    r = truncated_svd(np.zeros((4, 3)), tol=0.5)
    assert r.rank == 1
    np.testing.assert_array_equal(svd_reconstruct(r), np.zeros((4, 3)))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        truncated_svd(np.ones((3, 3)), rank=1, tol=0.5)
    with pytest.raises(ValueError):
        truncated_svd(np.ones((3, 3)))
    with pytest.raises(ValueError):
        truncated_svd(np.ones((3, 3)), rank=4)
    with pytest.raises(ValueError):
        truncated_svd(np.ones((3, 3)), tol=1.0)
    with pytest.raises(ValueError):
        truncated_svd(np.array([[np.nan, 1.0]]), rank=1)
    with pytest.raises(ValueError):
        hosvd(np.ones((3, 3)), eps=0.1)
    with pytest.raises(ValueError):
        hosvd(np.full((2, 2, 2), np.inf), eps=0.1)


def test_left_modes_orthonormal():
    rng = np.random.default_rng(11)
    m = rng.standard_normal((9, 7))
    r = truncated_svd(m, rank=4)
    gram = r.left_modes.T @ r.left_modes
    np.testing.assert_allclose(gram, np.eye(4), atol=1e-6)


def test_sign_convention_deterministic():
    rng = np.random.default_rng(5)
    m = rng.standard_normal((6, 6))
    r = truncated_svd(m, rank=6)
    for j in range(6):
        col = r.left_modes[:, j]
        assert col[np.argmax(np.abs(col))] >= 0


@given(st.integers(min_value=0, max_value=2**31))
@settings(max_examples=25, deadline=None)
def test_monotone_truncation_error(seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((8, 6))
    errs = [
        np.linalg.norm(m - svd_reconstruct(truncated_svd(m, rank=n))) for n in range(1, 7)
    ]
    for a, b in zip(errs, errs[1:]):
        assert b <= a + 1e-10


def test_full_rank_svd_reconstructs():
    rng = np.random.default_rng(17)
    m = rng.standard_normal((10, 6))
    r = truncated_svd(m, rank=6)
    err = np.linalg.norm(m - svd_reconstruct(r)) / np.linalg.norm(m)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# HOSVD
# ---------------------------------------------------------------------------


def test_hosvd_separable_tensor_exact():
    a = np.array([1.0, -0.5, 2.0, 0.3])  # temporal
    b = np.array([0.2, 1.0, 0.7])  # y
    c = np.array([1.5, -1.0])  # x
    t = np.einsum("k,y,x->kyx", a, b, c)
    r = hosvd(t, eps=1e-8)
    assert r.retained == (1, 1)
    np.testing.assert_allclose(hosvd_reconstruct(r), t, atol=1e-10)


def test_hosvd_eps_zero_reconstructs():
    rng = np.random.default_rng(2)
    t = rng.standard_normal((6, 5, 4))
    r = hosvd(t, eps=0.0)
    assert r.retained == (5, 4)
    err = np.linalg.norm(hosvd_reconstruct(r) - t) / np.linalg.norm(t)
    assert err < 1e-5


def test_hosvd_two_scale_drops_small_factor():
    rng = np.random.default_rng(23)
    a1, b1, c1 = rng.standard_normal(6), rng.standard_normal(5), rng.standard_normal(4)
    b2 = np.linalg.qr(np.column_stack([b1, rng.standard_normal(5)]))[0][:, 1]
    c2 = np.linalg.qr(np.column_stack([c1, rng.standard_normal(4)]))[0][:, 1]
    t = np.einsum("k,y,x->kyx", a1, b1, c1) + 0.05 * np.einsum("k,y,x->kyx", a1, b2, c2)
    r = hosvd(t, eps=0.5)

    # oracle: per-unfolding SVD retention counts computed directly
    for axis, n_kept in zip((1, 2), r.retained):
        unf = np.moveaxis(t, axis, 0).reshape(t.shape[axis], -1)
        s = np.linalg.svd(unf, compute_uv=False)
        assert n_kept == np.count_nonzero(s > 0.5 * s[0])
    assert r.retained == (1, 1)


def test_hosvd_error_bounded_by_dropped_tail():
    rng = np.random.default_rng(29)
    t = rng.standard_normal((7, 6, 5))
    for eps in (0.1, 0.3, 0.6):
        r = hosvd(t, eps=eps)
        err = np.linalg.norm(hosvd_reconstruct(r) - t)
        bound = np.sqrt(r.dropped_sq)
        # 1e-4 relative slack on the bound, machine-noise floor when nothing drops
        assert err <= bound * (1.0 + 1e-4) + 1e-9 * np.linalg.norm(t)


def test_hosvd_factors_orthonormal():
    rng = np.random.default_rng(31)
    t = rng.standard_normal((5, 8, 7))
    r = hosvd(t, eps=0.05)
    for f in r.factors:
        np.testing.assert_allclose(f.T @ f, np.eye(f.shape[1]), atol=1e-6)


def test_hosvd_reconstruct_dims_match_input():
    rng = np.random.default_rng(37)
    t = rng.standard_normal((4, 6, 5))
    r = hosvd(t, eps=0.2)
    assert hosvd_reconstruct(r).shape == t.shape
