from __future__ import annotations

import mpmath
import numpy as np
import pytest

from hbsenc.errors import InvalidInputError, SingularEvaluationError
from hbsenc.geometry import PointCloud
from hbsenc.kernels import (
    KernelMatrix,
    KernelSpec,
    assemble_nystrom,
    eval_kernel,
    kernel_matrix,
    line_points,
    point_source_rhs,
    sphere_points,
    starfish_boundary,
    starfish_curve,
    starfish_equispaced,
)


def test_log_unit_distance():
    assert eval_kernel(KernelSpec("log2d"), [0, 0], [1, 0]) == 0.0


def test_coulomb_distance_two():
    assert eval_kernel(KernelSpec("coulomb3d"), [0, 0, 0], [0, 2, 0]) == 0.5


def test_hankel_half():
    val = eval_kernel(KernelSpec("hankel2d", kappa=1.0), [0, 0], [0.5, 0])
    ref = complex(mpmath.hankel1(0, 0.5))
    assert abs(val - ref) <= 1e-12 * abs(ref)


def test_helmholtz3d_and_powerlaw():
    r = 1.7
    v = eval_kernel(KernelSpec("helmholtz3d", kappa=2.0), [0, 0, 0], [r, 0, 0])
    assert abs(v - np.exp(2j * r) / r) < 1e-15
    assert eval_kernel(KernelSpec("powerlaw", p=3.0), [0.0], [2.0]) == 0.125


def test_coincident_points_raise():
    with pytest.raises(SingularEvaluationError):
        eval_kernel(KernelSpec("log2d"), [1, 1], [1, 1])


@pytest.mark.parametrize("kw", [dict(family="nope"), dict(family="powerlaw", p=0.0),
                                dict(family="hankel2d", kappa=0.0), dict(family="log2d", kappa=np.inf)])
def test_kernel_spec_validation(kw):
    with pytest.raises(InvalidInputError):
        KernelSpec(**kw)


def test_scalar_types():
    assert KernelSpec("hankel2d", kappa=1).is_complex
    assert KernelSpec("helmholtz3d", kappa=1).is_complex
    assert not KernelSpec("log2d").is_complex


def test_nystrom_single_point():
    sys = assemble_nystrom(KernelSpec("log2d"), PointCloud(np.array([[0.0, 0.0]])), [1.0])
    np.testing.assert_array_equal(sys.matrix, [[1.0]])


def test_nystrom_circle_matches_double_loop():
    theta = 2 * np.pi * np.arange(8) / 8
    pts = np.column_stack([np.cos(theta), np.sin(theta)])
    sys = assemble_nystrom(KernelSpec("log2d"), PointCloud(pts), np.ones(8))
    ref = np.eye(8)
    for i in range(8):
        for j in range(8):
            if i != j:
                dx, dy = pts[i] - pts[j]
                ref[i, j] = np.log(np.sqrt(dx * dx + dy * dy))
    np.testing.assert_array_equal(sys.matrix, ref)


def test_nystrom_symmetric_for_uniform_weights():
    cloud, _ = starfish_equispaced(64)
    A = assemble_nystrom(KernelSpec("log2d"), cloud, np.full(64, 0.1)).matrix
    assert np.abs(A - A.T).max() <= 1e-15


def test_nystrom_duplicate_points_report_pair():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(SingularEvaluationError) as info:
        assemble_nystrom(KernelSpec("log2d"), PointCloud(pts), np.ones(3))
    assert set(info.value.pair) == {0, 2}


def test_nystrom_rejects_bad_weights():
    cloud, w = line_points(4)
    with pytest.raises(InvalidInputError):
        assemble_nystrom(KernelSpec("powerlaw"), cloud, -w)
    with pytest.raises(InvalidInputError):
        assemble_nystrom(KernelSpec("powerlaw"), cloud, w[:3])


def test_kernel_matrix_blocks_match_dense():
    cloud, w = starfish_boundary(8, 4)
    km = KernelMatrix(KernelSpec("hankel2d", kappa=5.0), cloud, w)
    A = km.dense()
    rows, cols = np.array([3, 0, 17]), np.array([5, 3, 31, 2])
    np.testing.assert_allclose(km.block(rows, cols), A[np.ix_(rows, cols)], rtol=1e-14)
    np.testing.assert_array_equal(np.diag(A), np.ones(32))
    np.testing.assert_allclose(A[0, 1], w[1] * kernel_matrix(km.spec, cloud.points[:1], cloud.points[1:2])[0, 0])


def test_starfish_single_node():
    cloud, w = starfish_boundary(1, 1)
    pts, speed = starfish_curve(np.array([np.pi]))
    np.testing.assert_allclose(cloud.points, pts, atol=1e-15)
    np.testing.assert_allclose(w, 2 * np.pi * speed)


def _polyline_length(n=2**20):
    pts, _ = starfish_curve(2 * np.pi * np.arange(n + 1) / n)
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def test_starfish_arclength():
    ref = _polyline_length()
    _, w = starfish_boundary(64, 16)
    assert abs(w.sum() - ref) <= 1e-8 * ref


def test_starfish_quadrature_converged():
    _, w16 = starfish_boundary(64, 16)
    _, w32 = starfish_boundary(64, 32)
    assert abs(w16.sum() - w32.sum()) < 1e-10


def test_starfish_8192_points():
    cloud, w = starfish_boundary(512, 16)
    assert cloud.n == 8192 and w.shape == (8192,)


def test_geometry_helpers():
    c, w = sphere_points(100)
    np.testing.assert_allclose(np.linalg.norm(c.points, axis=1), 1.0)
    assert abs(w.sum() - 4 * np.pi) < 1e-12
    c, w = line_points(10)
    np.testing.assert_allclose(np.diff(c.points[:, 0]), 1.0)
    b = point_source_rhs(KernelSpec("log2d"), starfish_equispaced(16)[0])
    assert b.shape == (16,) and np.all(np.isfinite(b))


def test_dense_system_triplet_roundtrip(tmp_path):
    from hbsenc.io import read_triplet

    cloud, w = line_points(5)
    sys = assemble_nystrom(KernelSpec("powerlaw", p=2.0), cloud, w)
    sys.write(tmp_path / "a.txt")
    back = read_triplet(tmp_path / "a.txt")
    assert back.nnz == 25
    np.testing.assert_array_equal(back.toarray().real, sys.matrix)
