from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hbsenc.errors import InvalidInputError
from hbsenc.geometry import make_proxy
from hbsenc.kernels import KernelMatrix, KernelSpec, kernel_matrix, line_points
from hbsenc.lowrank import interp_decompose, proxy_id, q1_bound, row_interp_decompose, strong_rrqr


def check_singular_value_bounds(M, res, f):
    k, n = res.k, M.shape[1]
    s = np.linalg.svd(M, compute_uv=False)
    q1 = q1_bound(k, n, f)
    if k:
        sa = np.linalg.svd(res.A_k, compute_uv=False)
        assert np.all(sa >= s[:k] / q1 * (1 - 1e-10) - 1e-13 * s[0])
    if k < min(M.shape):
        sc = np.linalg.svd(res.C_k, compute_uv=False)
        assert np.all(sc <= s[k:k + sc.size] * q1 * (1 + 1e-10) + 1e-13 * s[0])


def test_identity():
    res = strong_rrqr(np.eye(2), tol=0.0)
    assert res.k == 2 and res.T.size == 0
    np.testing.assert_array_equal(res.perm, [0, 1])


def test_rank_one_2x2():
    M = np.array([[1.0, 2.0], [2.0, 4.0]])
    res = interp_decompose(M, f=2.0, tol=1e-12)
    assert res.k == 1
    assert np.abs(res.rrqr.T).max() <= 2.0
    np.testing.assert_allclose(M[:, res.skeleton] @ res.P, M, atol=1e-14)
    assert np.linalg.svd(M, compute_uv=False)[1] < 1e-14


def test_exact_rank_three(rng):
    M = rng.standard_normal((16, 3)) @ rng.standard_normal((3, 16))
    res = strong_rrqr(M, f=2.0, tol=1e-10)
    assert res.k == 3
    assert q1_bound(3, 16, 2.0) == np.sqrt(1 + 4 * 3 * 13)
    assert np.abs(res.T).max() <= 2.0 + 1e-12
    check_singular_value_bounds(M, res, 2.0)


def test_zero_matrix():
    res = interp_decompose(np.zeros((5, 7)))
    assert res.k == 0 and res.skeleton.size == 0 and res.P.shape == (0, 7)
    assert res.achieved_tol == 0.0


def test_duplicated_columns():
    c = np.array([1.0, -2.0, 0.5])
    res = interp_decompose(np.column_stack([c, c]))
    assert res.k == 1
    np.testing.assert_allclose(np.abs(res.P), [[1.0, 1.0]])


def test_log_kernel_separated_boxes(rng):
    x = rng.random((32, 2))
    y = rng.random((32, 2)) + [4.0, 0.0]
    M = kernel_matrix(KernelSpec("log2d"), x, y)
    res = interp_decompose(M, tol=1e-10)
    assert res.k <= 20
    err = np.linalg.norm(M - M[:, res.skeleton] @ res.P, 2) / np.linalg.norm(M, 2)
    assert err <= 1e-9


def test_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        strong_rrqr(np.array([[1.0, np.inf]]))
    with pytest.raises(InvalidInputError):
        strong_rrqr(np.eye(2), f=0.5)


def test_determinism(rng):
    M = rng.standard_normal((20, 30))
    a, b = strong_rrqr(M, tol=1e-3), strong_rrqr(M.copy(), tol=1e-3)
    assert a.k == b.k
    np.testing.assert_array_equal(a.perm, b.perm)
    np.testing.assert_array_equal(a.T, b.T)


def test_swaps_enforce_bound_with_tight_f(rng):
    # graded columns make plain pivoted QR exceed a tight f
    M = rng.standard_normal((30, 30)) @ np.diag(np.logspace(0, -12, 30)) @ rng.standard_normal((30, 30))
    res = strong_rrqr(M, f=1.01, tol=1e-6)
    assert np.abs(res.T).max() <= 1.01 * (1 + 1e-10)
    check_singular_value_bounds(M, res, 1.01)


@given(
    st.integers(1, 24), st.integers(1, 24), st.integers(0, 2**31),
    st.sampled_from([1.0, 1.5, 2.0, 4.0]), st.sampled_from([0.0, 1e-12, 1e-6, 1e-2]),
)
def test_rrqr_properties(m, n, seed, f, tol):
    r = np.random.default_rng(seed)
    rank = r.integers(1, min(m, n) + 1)
    M = r.standard_normal((m, rank)) @ r.standard_normal((rank, n))
    if seed % 2:
        M = M + 1j * (r.standard_normal((m, rank)) @ r.standard_normal((rank, n)))
    res = strong_rrqr(M, f=f, tol=tol)
    assert sorted(res.perm.tolist()) == list(range(n))
    assert res.k <= min(m, n)
    if res.T.size:
        assert np.abs(res.T).max() <= f * (1 + 1e-10)
    check_singular_value_bounds(M, res, f)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                  elements=st.floats(-10, 10, allow_subnormal=False)))
def test_id_identity_submatrix_exact(M):
    res = interp_decompose(M, tol=1e-8)
    if res.k:
        assert np.array_equal(res.P[:, res.skeleton], np.eye(res.k))
        assert np.abs(res.P).max() <= 2.0 * (1 + 1e-10)


def test_id_residual_bound(rng):
    M = rng.standard_normal((40, 8)) @ np.diag(np.logspace(0, -14, 8)) @ rng.standard_normal((8, 50))
    tol = 1e-6
    res = interp_decompose(M, tol=tol)
    err = np.linalg.norm(M - M[:, res.skeleton] @ res.P, 2)
    assert err <= q1_bound(res.k, 50, 2.0) * tol * np.linalg.norm(M, 2) * 10


def test_row_id(rng):
    M = rng.standard_normal((12, 2)) @ rng.standard_normal((2, 9))
    skel, U, _ = row_interp_decompose(M)
    np.testing.assert_allclose(U @ M[skel], M, atol=1e-12)


def _line_block():
    cloud, w = line_points(512)
    km = KernelMatrix(KernelSpec("coulomb3d"), cloud, w)
    idx = np.arange(128, 192)
    box = (np.array([128.0]), np.array([192.0]))
    comp = np.setdiff1d(np.arange(512), idx)
    return km, idx, box, comp


def _far_error(km, idx, comp, res):
    A = km.dense()
    B = A[np.ix_(idx, comp)]
    approx = res.P.T @ A[np.ix_(idx[res.skeleton], comp)]
    return np.linalg.norm(B - approx) / np.linalg.norm(B)


def test_proxy_id_matches_global_id():
    km, idx, box, comp = _line_block()
    tol = 1e-10
    px = make_proxy(*box, m=64)
    inside = comp[np.abs(km.points[comp, 0] - 160.0) < px.radius]
    res = proxy_id(km, idx, inside, px, box, tol=tol)
    assert res.P.shape == (res.k, idx.size)
    assert _far_error(km, idx, comp, res) <= 10 * tol
    glob = interp_decompose(km.dense()[np.ix_(idx, comp)].T, tol=tol)
    assert _far_error(km, idx, comp, glob) <= 10 * tol


def test_proxy_saturation():
    km, idx, box, comp = _line_block()
    tol = 1e-10
    errs = []
    for m in (32, 64, 128):
        px = make_proxy(*box, m=m)
        inside = comp[np.abs(km.points[comp, 0] - 160.0) < px.radius]
        errs.append(_far_error(km, idx, comp, proxy_id(km, idx, inside, px, box, tol=tol)))
    assert max(errs) - min(errs) < tol


def test_proxy_id_without_proxy_is_plain_id():
    km, idx, box, comp = _line_block()
    near = np.arange(100, 128)
    a = proxy_id(km, idx, near, None, box, tol=1e-8)
    b = interp_decompose(km.block(idx, near).T, tol=1e-8)
    np.testing.assert_array_equal(a.skeleton, b.skeleton)
    np.testing.assert_array_equal(a.P, b.P)


def test_proxy_inside_box_rejected():
    km, idx, box, comp = _line_block()
    px = make_proxy(np.array([0.0, 0.0]), np.array([1.0, 1.0]), m=8)
    cloud2 = KernelMatrix(KernelSpec("log2d"), *__import__("hbsenc").kernels.starfish_equispaced(32))
    with pytest.raises(InvalidInputError):
        proxy_id(cloud2, np.arange(4), np.arange(4, 8), px, (np.array([-5.0, -5.0]), np.array([5.0, 5.0])))


def test_rank_deficient_with_zero_tol_regression():
    # rank-one input with tol = 0: roundoff-level diagonal entries must not count toward k
    r = np.random.default_rng(34300)
    rank = r.integers(1, 4)
    M = r.standard_normal((3, rank)) @ r.standard_normal((rank, 17))
    res = strong_rrqr(M, f=1.0, tol=0.0)
    assert res.k == np.linalg.matrix_rank(M)
    assert res.swaps < 100
    assert np.abs(res.T).max() <= 1.0 * (1 + 1e-10)
    check_singular_value_bounds(M, res, 1.0)
