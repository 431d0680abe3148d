"""Extended sparsification of HBS factors and the analysis around it.

Unknowns are ordered ``x, y_1, z_1, ..., y_lam, z_lam`` and equations
``x, z_1, y_1, ..., z_lam, y_lam``, so that with scaling ``t``

    x-rows:    D_1 x + t^-1 L_1 y_1                 = b
    z_l-rows:  t R_l v_{l-1} - z_l                  = 0    (v_0 = x, v_l = z_l)
    y_l-rows:  -y_l + D_{l+1} z_l + t^-1 L_{l+1} y_{l+1} = 0

which is the banded block matrix of the extended system with the last
``L`` term absent. Solving it returns the scaled auxiliaries
``y'_l = t^l y_l`` and ``z'_l = t^l z_l``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, SingularMatrixError, SizeGuardError
from .hbs import HBSFactors
from .io import read_layout, read_triplet, write_layout, write_triplet

__all__ = [
    "SparseMatrix",
    "ExtendedSolution",
    "ErrorReport",
    "assemble_extended",
    "solve_extended",
    "build_postprocess",
    "gershgorin_bound",
    "sparsity_profile",
    "row_sparsity_bound",
    "tikhonov_solve",
    "tikhonov_cond_bounds",
    "default_tikhonov_alpha",
    "error_propagation_check",
    "cond2_estimate",
    "DENSE_PIVOT_LIMIT",
]

DENSE_PIVOT_LIMIT = 4096


def _row_layout(col_layout):
    """Equation blocks: ``x`` first, then ``z_l`` before ``y_l`` on every level."""
    by_name = {name: size for name, _, size in col_layout}
    out, off = [("x", 0, by_name["x"])], by_name["x"]
    lam = (len(col_layout) - 1) // 2
    for l in range(1, lam + 1):
        for name in (f"z{l}", f"y{l}"):
            out.append((name, off, by_name[name]))
            off += by_name[name]
    return tuple(out)


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed-row matrix with named column segments.

    ``block_layout`` lists ``(name, offset, size)`` for the unknowns;
    ``row_layout`` does the same for the equations.
    """

    csr: sp.csr_matrix
    block_layout: tuple = ()
    t: float = 1.0

    def __post_init__(self):
        m = sp.csr_matrix(self.csr)
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, "csr", m)
        if not self.block_layout:
            object.__setattr__(self, "block_layout", (("x", 0, m.shape[1]),))

    @property
    def n_rows(self) -> int:
        return self.csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self.csr.shape[1]

    @property
    def shape(self):
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    @property
    def row_layout(self):
        if len(self.block_layout) == 1:
            return self.block_layout
        return _row_layout(self.block_layout)

    def segment(self, name: str) -> slice:
        for n, off, size in self.block_layout:
            if n == name:
                return slice(off, off + size)
        raise KeyError(name)

    def row_segment(self, name: str) -> slice:
        for n, off, size in self.row_layout:
            if n == name:
                return slice(off, off + size)
        raise KeyError(name)

    def entries(self):
        """``(row, col, value)`` arrays in row-major order."""
        coo = self.csr.tocoo()
        return coo.row, coo.col, coo.data

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def __matmul__(self, v):
        return self.csr @ v

    def write(self, path) -> None:
        """Triplet file at ``path`` plus the column layout in ``path.layout``."""
        path = Path(path)
        write_triplet(path, self.csr)
        write_layout(path.with_name(path.name + ".layout"), self.block_layout)

    @classmethod
    def read(cls, path, t: float = 1.0) -> "SparseMatrix":
        path = Path(path)
        lay = path.with_name(path.name + ".layout")
        layout = read_layout(lay) if lay.exists() else ()
        return cls(read_triplet(path), layout, t)


@dataclass(frozen=True)
class ExtendedSolution:
    """Solution ``x' = (x, y'_1, z'_1, ...)`` of the extended system."""

    x: np.ndarray
    aux: tuple
    success_prob: float
    full: np.ndarray
    t: float = 1.0

    def unscaled_aux(self):
        """``(y_l, z_l)`` with the ``t^l`` scaling removed."""
        return tuple((y / self.t ** l, z / self.t ** l) for l, (y, z) in enumerate(self.aux, start=1))


def assemble_extended(factors: HBSFactors, t: float = 1.0) -> SparseMatrix:
    """Assemble ``A_sp`` with ``L_l -> L_l / t`` and ``R_l -> t R_l``."""
    if not t > 0 or not np.isfinite(t):
        raise InvalidInputError("t must be positive")
    lam = factors.depth
    n = factors.n
    ysz = [factors.row_ids[l].size for l in range(1, lam + 1)]
    zsz = [factors.col_ids[l].size for l in range(1, lam + 1)]
    col_layout = [("x", 0, n)]
    off = n
    for l in range(lam):
        col_layout.append((f"y{l + 1}", off, ysz[l]))
        off += ysz[l]
        col_layout.append((f"z{l + 1}", off, zsz[l]))
        off += zsz[l]
    col_off = {name: o for name, o, _ in col_layout}
    row_off = {name: o for name, o, _ in _row_layout(col_layout)}
    total = off

    parts = []

    def put(block, r0, c0, scale=1.0):
        coo = sp.coo_matrix(block)
        parts.append((coo.row + r0, coo.col + c0, coo.data * scale))

    def eye(size, r0, c0):
        idx = np.arange(size)
        parts.append((idx + r0, idx + c0, -np.ones(size)))

    put(factors.D[0], 0, 0)
    for l in range(1, lam + 1):
        put(factors.L[l - 1], row_off["x"] if l == 1 else row_off[f"y{l - 1}"], col_off[f"y{l}"], 1.0 / t)
        src = "x" if l == 1 else f"z{l - 1}"
        put(factors.R[l - 1], row_off[f"z{l}"], col_off[src], t)
        eye(zsz[l - 1], row_off[f"z{l}"], col_off[f"z{l}"])
        eye(ysz[l - 1], row_off[f"y{l}"], col_off[f"y{l}"])
        put(factors.D[l], row_off[f"y{l}"], col_off[f"z{l}"])

    r = np.concatenate([p[0] for p in parts])
    c = np.concatenate([p[1] for p in parts])
    v = np.concatenate([np.asarray(p[2], dtype=complex) for p in parts])
    keep = v != 0
    m = sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(total, total), dtype=complex)
    return SparseMatrix(m, tuple(col_layout), t)


def _pivot_of_singular(a: sp.spmatrix) -> int:
    if a.shape[0] > DENSE_PIVOT_LIMIT:
        return -1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, _ = sla.lu_factor(a.toarray(), check_finite=False)
    d = np.abs(np.diag(lu))
    scale = max(float(d.max()), 1.0) if d.size else 1.0
    bad = np.nonzero(d <= 1e-14 * scale)[0]
    return int(bad[0]) if bad.size else -1


def _splu(a: sp.spmatrix):
    try:
        return spla.splu(sp.csc_matrix(a))
    except RuntimeError as exc:
        piv = _pivot_of_singular(a)
        raise SingularMatrixError(f"matrix is singular (pivot {piv}): {exc}", pivot=piv) from exc


def solve_extended(A_sp: SparseMatrix, b, t: float | None = None) -> ExtendedSolution:
    """Sparse LU solve of the extended system with ``b`` padded by zeros."""
    b = np.asarray(b)
    n = A_sp.segment("x").stop
    if b.shape != (n,):
        raise InvalidInputError(f"right-hand side must have length {n}")
    t = A_sp.t if t is None else t
    rhs = np.zeros(A_sp.n_rows, dtype=complex)
    rhs[:n] = b
    lu = _splu(A_sp.csr)
    xp = lu.solve(rhs)
    if not np.all(np.isfinite(xp)):
        raise SingularMatrixError("solve produced non-finite values", pivot=-1)
    return _split(A_sp, xp, t)


def _split(A_sp: SparseMatrix, xp, t):
    x = xp[A_sp.segment("x")]
    lam = (len(A_sp.block_layout) - 1) // 2
    aux = tuple((xp[A_sp.segment(f"y{l}")], xp[A_sp.segment(f"z{l}")]) for l in range(1, lam + 1))
    total = float(np.vdot(xp, xp).real)
    prob = float(np.vdot(x, x).real) / total if total > 0 else 1.0
    return ExtendedSolution(x=x, aux=aux, success_prob=prob, full=xp, t=t)


def build_postprocess(factors: HBSFactors, t: float = 1.0) -> SparseMatrix:
    """``A'``: the extended matrix with its first block row replaced by ``[I 0 ... 0]``."""
    A = assemble_extended(factors, t)
    n = factors.n
    m = A.csr.tolil()
    m[:n, :] = 0
    m[:n, :n] = sp.identity(n, dtype=complex)
    out = sp.csr_matrix(m)
    out.eliminate_zeros()
    return SparseMatrix(out, A.block_layout, t)


def _csr(A):
    if isinstance(A, SparseMatrix):
        return A.csr
    if sp.issparse(A):
        return sp.csr_matrix(A)
    return sp.csr_matrix(np.atleast_2d(np.asarray(A)))


def gershgorin_bound(A) -> float:
    """Largest absolute row sum; bounds every eigenvalue modulus."""
    m = _csr(A)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError("Gershgorin bound needs a square matrix")
    if m.nnz == 0:
        return 0.0
    return float(np.max(np.asarray(abs(m).sum(axis=1)).ravel()))


def sparsity_profile(A):
    """``(s_r, s_c, c_sp)``: max nonzeros per row, per column and max absolute entry."""
    m = _csr(A).copy()
    m.eliminate_zeros()
    if m.nnz == 0:
        return 0, 0, 0.0
    s_r = int(np.diff(m.indptr).max())
    s_c = int(np.diff(m.tocsc().indptr).max())
    return s_r, s_c, float(np.abs(m.data).max())


def row_sparsity_bound(factors: HBSFactors, d: int | None = None) -> int:
    """Closed-form row sparsity bound of the extended system.

    ``max{3^d n_1 + k_1, n_l - k_l + 1, (6^d - 3^d) k_l + k_{l+1} + 1, (6^d - 3^d) k_lam + 1}``
    with ``n_l`` the largest block and ``k_l`` the largest rank on level ``l``.
    """
    d = factors.d if d is None else d
    lam = factors.depth
    if lam == 0:
        return int(np.diff(factors.D[0].tocsr().indptr).max(initial=0))
    ns, ks = [], []
    for mp in factors.maps:
        ns.append(max(g.size for g in mp.row_blocks + mp.col_blocks))
        ks.append(max(s.size for s in mp.row_skel + mp.col_skel))
    ring = 6 ** d - 3 ** d
    terms = [3 ** d * ns[0] + ks[0]]
    for l in range(lam):
        terms.append(ns[l] - ks[l] + 1)
        nxt = ks[l + 1] if l + 1 < lam else 0
        terms.append(ring * ks[l] + nxt + 1)
    return int(max(terms))


def tikhonov_cond_bounds(A, alpha: float):
    """Both condition bounds ``(c^2 s_r s_c + a)/a`` and ``(c^2 s_r^2 + a)/a``."""
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    s_r, s_c, c = sparsity_profile(A)
    return (c * c * s_r * s_c + alpha) / alpha, (c * c * s_r * s_r + alpha) / alpha


def default_tikhonov_alpha(A) -> float:
    s_r, _, c = sparsity_profile(A)
    return 1e-8 * (c * s_r) ** 2


def tikhonov_solve(A, b, alpha: float):
    """Solve ``(A^H A + alpha I) x = A^H b``.

    Returns ``(x, cond_bound)`` with ``cond_bound`` the larger of the two
    bounds reported by :func:`tikhonov_cond_bounds`. ``b`` may cover only the
    leading ``x`` block; it is then padded with zeros.
    """
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    m = _csr(A).astype(complex)
    b = np.asarray(b)
    if b.shape[0] < m.shape[0]:
        b = np.concatenate([b, np.zeros(m.shape[0] - b.shape[0], dtype=complex)])
    if b.shape != (m.shape[0],):
        raise InvalidInputError("right-hand side length does not match the matrix")
    ah = m.conj().T.tocsr()
    normal = (ah @ m + alpha * sp.identity(m.shape[1], dtype=complex, format="csr")).tocsc()
    x = _splu(normal).solve(ah @ b)
    return x, max(tikhonov_cond_bounds(m, alpha))


@dataclass(frozen=True)
class ErrorReport:
    eps: float
    kappa: float
    rel_x_error: float
    x_bound: float
    rel_b_error: float
    b_bound: float
    precondition_ok: bool

    @property
    def x_bound_holds(self) -> bool:
        return self.precondition_ok and self.rel_x_error <= self.x_bound * (1 + 1e-12) + 1e-15

    @property
    def b_bound_holds(self) -> bool:
        return self.precondition_ok and self.rel_b_error <= self.b_bound * (1 + 1e-12) + 1e-15


def error_propagation_check(A, A_eps, b, limit: int = DENSE_PIVOT_LIMIT) -> ErrorReport:
    """Compare ``x = A^-1 b`` with ``x_eps = A_eps^-1 b`` against ``eps kappa / (1 - eps kappa)``.

    ``b_eps = A_eps x`` is the data the perturbed operator reproduces;
    ``||b - b_eps|| <= eps kappa ||b||`` follows from ``||A - A_eps|| <= eps ||A||``.
    When ``eps kappa >= 1`` the report flags the precondition and the bounds are
    reported as infinite.
    """
    A = np.asarray(A)
    A_eps = np.asarray(A_eps)
    if A.shape != A_eps.shape or A.shape[0] != A.shape[1]:
        raise InvalidInputError("A and A_eps must be square and of equal shape")
    if A.shape[0] > limit:
        raise SizeGuardError(f"dense error check limited to N <= {limit}")
    b = np.asarray(b)
    s = np.linalg.svd(A, compute_uv=False)
    norm_a = s[0]
    kappa = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    eps = float(np.linalg.norm(A - A_eps, 2) / norm_a)
    x = np.linalg.solve(A, b)
    x_eps = np.linalg.solve(A_eps, b)
    nb = np.linalg.norm(b)
    nx = np.linalg.norm(x)
    rel_x = float(np.linalg.norm(x - x_eps) / nx) if nx > 0 else 0.0
    rel_b = float(np.linalg.norm(b - A_eps @ x) / nb) if nb > 0 else 0.0
    ek = eps * kappa
    ok = ek < 1
    x_bound = ek / (1 - ek) if ok else np.inf
    return ErrorReport(eps=eps, kappa=kappa, rel_x_error=rel_x, x_bound=float(x_bound),
                       rel_b_error=rel_b, b_bound=float(ek) if ok else np.inf, precondition_ok=ok)


def cond2_estimate(A, dense_limit: int = 1500) -> float:
    """Spectral condition number; exact below ``dense_limit`` rows, else from sparse SVD estimates."""
    m = _csr(A).astype(complex)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError("condition number needs a square matrix")
    if m.shape[0] <= dense_limit:
        return float(np.linalg.cond(m.toarray(), 2))
    smax = float(spla.svds(m, k=1, which="LM", return_singular_vectors=False, random_state=0)[0])
    lu = _splu(m)
    inv = spla.LinearOperator(m.shape, matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="H"),
                              dtype=complex)
    inv_norm = float(spla.svds(inv, k=1, which="LM", return_singular_vectors=False, random_state=0)[0])
    return smax * inv_norm
