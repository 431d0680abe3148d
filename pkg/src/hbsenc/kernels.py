"""Kernel families, Nystrom assembly and the boundary geometries used in the experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SingularEvaluationError
from .geometry import PointCloud
from .special import hankel0

__all__ = [
    "KernelSpec",
    "DenseSystem",
    "KernelMatrix",
    "DenseMatrix",
    "FAMILIES",
    "eval_kernel",
    "kernel_matrix",
    "assemble_nystrom",
    "starfish_boundary",
    "starfish_equispaced",
    "starfish_curve",
    "sphere_points",
    "line_points",
    "point_source_rhs",
]

FAMILIES = ("log2d", "hankel2d", "coulomb3d", "helmholtz3d", "powerlaw")
_COMPLEX = {"hankel2d", "helmholtz3d"}

# starfish r(theta) = 1 + amplitude * cos(arms * theta)
STARFISH_ARMS = 5
STARFISH_AMPLITUDE = 0.3


@dataclass(frozen=True)
class KernelSpec:
    family: str
    kappa: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown kernel family {self.family!r}")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise InvalidInputError("wavenumber must be finite and non-negative")
        if not self.p > 0:
            raise InvalidInputError("power-law exponent must be positive")
        if self.family in _COMPLEX and self.kappa == 0:
            raise InvalidInputError(f"{self.family} needs a positive wavenumber")

    @property
    def is_complex(self) -> bool:
        return self.family in _COMPLEX

    @property
    def dtype(self):
        return np.complex128 if self.is_complex else np.float64

    def __call__(self, r):
        """Evaluate on an array of distances ``r > 0``."""
        r = np.asarray(r, dtype=float)
        f = self.family
        if f == "log2d":
            return np.log(r)
        if f == "hankel2d":
            return hankel0(self.kappa * r)
        if f == "coulomb3d":
            return 1.0 / r
        if f == "helmholtz3d":
            return np.exp(1j * self.kappa * r) / r
        return r ** (-self.p)


def eval_kernel(spec: KernelSpec, x, y):
    """``K(x, y)``; raises :class:`SingularEvaluationError` when ``x == y``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r = float(np.linalg.norm(x - y))
    if r == 0.0:
        raise SingularEvaluationError("kernel evaluated at coincident points")
    return spec(np.array(r))[()]


def _distances(x, y):
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def kernel_matrix(spec: KernelSpec, x, y) -> np.ndarray:
    """Dense ``K(x_i, y_j)`` for disjoint point sets."""
    r = _distances(np.atleast_2d(x), np.atleast_2d(y))
    if np.any(r == 0):
        i, j = np.argwhere(r == 0)[0]
        raise SingularEvaluationError(f"coincident points at pair ({i}, {j})", pair=(int(i), int(j)))
    return spec(r)


@dataclass(frozen=True)
class DenseSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    cloud: PointCloud
    weights: np.ndarray
    kernel: KernelSpec | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def write(self, path) -> None:
        """Store the matrix in the triplet format, fully populated."""
        from .io import write_triplet

        write_triplet(path, self.matrix)


class KernelMatrix:
    """Lazy access to ``A_ii = 1, A_ij = w_j K(x_i, x_j)`` without forming ``A``."""

    def __init__(self, spec: KernelSpec, cloud: PointCloud, weights):
        self.spec = spec
        self.cloud = cloud
        self.points = cloud.points
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (cloud.n,):
            raise InvalidInputError("weights must have one entry per point")
        self.dtype = spec.dtype
        self.shape = (cloud.n, cloud.n)
        self.mean_weight = float(np.mean(self.weights))

    def block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.empty((rows.size, cols.size), dtype=self.dtype)
        if rows.size == 0 or cols.size == 0:
            return out
        r = _distances(self.points[rows], self.points[cols])
        same = rows[:, None] == cols[None, :]
        coincident = (r == 0) & ~same
        if np.any(coincident):
            i, j = np.argwhere(coincident)[0]
            raise SingularEvaluationError(
                f"duplicate points {rows[i]} and {cols[j]}", pair=(int(rows[i]), int(cols[j])))
        r = np.where(same, 1.0, r)
        out[...] = self.spec(r) * self.weights[cols][None, :]
        out[same] = 1.0
        return out

    def dense(self) -> np.ndarray:
        idx = np.arange(self.shape[0])
        return self.block(idx, idx)

    def target_field(self, rows, sources) -> np.ndarray:
        """Kernel from arbitrary source points to cloud points ``rows``."""
        return self.spec(_distances(self.points[rows], np.atleast_2d(sources)))

    def source_field(self, targets, cols) -> np.ndarray:
        """Kernel from cloud points ``cols`` (with their weights) to arbitrary targets."""
        return self.spec(_distances(np.atleast_2d(targets), self.points[cols])) * self.weights[cols][None, :]


class DenseMatrix:
    """Entry access backed by an explicit array."""

    spec = None

    def __init__(self, a, cloud: PointCloud | None = None):
        self.a = np.asarray(a)
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise InvalidInputError("matrix must be square")
        self.cloud = cloud
        self.dtype = self.a.dtype if np.iscomplexobj(self.a) else np.float64
        self.shape = self.a.shape

    def block(self, rows, cols) -> np.ndarray:
        return self.a[np.ix_(np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))]

    def dense(self) -> np.ndarray:
        return self.a


def assemble_nystrom(spec: KernelSpec, cloud: PointCloud, weights, rhs=None) -> DenseSystem:
    """Dense Nystrom matrix of ``sigma + int K sigma = f`` with the self term dropped."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (cloud.n,):
        raise InvalidInputError("weights length must equal the number of points")
    if np.any(weights <= 0):
        raise InvalidInputError("quadrature weights must be positive")
    a = KernelMatrix(spec, cloud, weights).dense()
    if rhs is None:
        rhs = np.zeros(cloud.n, dtype=spec.dtype)
    return DenseSystem(matrix=a, rhs=np.asarray(rhs), cloud=cloud, weights=weights, kernel=spec)


def starfish_curve(theta, arms=STARFISH_ARMS, amplitude=STARFISH_AMPLITUDE):
    """Points and speed ``|x'(theta)|`` of the starfish curve."""
    theta = np.asarray(theta, dtype=float)
    r = 1.0 + amplitude * np.cos(arms * theta)
    dr = -amplitude * arms * np.sin(arms * theta)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return pts, np.sqrt(r * r + dr * dr)


def starfish_boundary(n_panels: int, nodes_per_panel: int,
                      arms=STARFISH_ARMS, amplitude=STARFISH_AMPLITUDE):
    """Composite Gauss-Legendre discretisation of the starfish boundary.

    Returns the point cloud and the quadrature weights (arclength included).
    """
    if n_panels < 1 or nodes_per_panel < 1:
        raise InvalidInputError("need at least one panel and one node per panel")
    t, w = np.polynomial.legendre.leggauss(nodes_per_panel)
    h = 2.0 * np.pi / n_panels
    starts = h * np.arange(n_panels)
    theta = (starts[:, None] + 0.5 * h * (t[None, :] + 1.0)).ravel()
    wt = np.tile(0.5 * h * w, n_panels)
    pts, speed = starfish_curve(theta, arms, amplitude)
    return PointCloud(pts), wt * speed


def starfish_equispaced(n: int, arms=STARFISH_ARMS, amplitude=STARFISH_AMPLITUDE):
    """``n`` points equispaced in angle with trapezoid weights."""
    theta = 2.0 * np.pi * np.arange(n) / n
    pts, speed = starfish_curve(theta, arms, amplitude)
    return PointCloud(pts), (2.0 * np.pi / n) * speed


def sphere_points(n: int, radius: float = 1.0):
    """Fibonacci points on a sphere with equal-area weights."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (1.0 + np.sqrt(5.0)) * k
    pts = radius * np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    return PointCloud(pts), np.full(n, 4.0 * np.pi * radius ** 2 / n)


def line_points(n: int, length: float | None = None):
    """Uniform cell-centred points on ``[0, length]`` with unit spacing by default."""
    if length is None:
        length = float(n)
    h = length / n
    return PointCloud((np.arange(n) + 0.5)[:, None] * h), np.full(n, h)


def point_source_rhs(spec: KernelSpec, cloud: PointCloud, source=None) -> np.ndarray:
    """Field of a unit point source placed outside the boundary."""
    if source is None:
        source = np.full(cloud.d, 3.0)
        source[0] = 2.5
    return kernel_matrix(spec, cloud.points, np.atleast_2d(source))[:, 0]
