"""Strong rank-revealing QR and interpolative decompositions.

``strong_rrqr`` starts from LAPACK's column-pivoted QR, fixes the numerical
rank from the decay of ``|R_ii|``, then performs Gu-Eisenstat column swaps
until every ``rho_ij = sqrt(|T_ij|^2 + (gamma_j / omega_i)^2)`` is at most
``f``. That stopping rule gives both the entry bound ``|T_ij| <= f`` and the
singular value bounds with ``q1 = sqrt(1 + f^2 k (n - k))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InvalidInputError

__all__ = [
    "RRQRResult",
    "IDResult",
    "strong_rrqr",
    "interp_decompose",
    "row_interp_decompose",
    "proxy_id",
    "proxy_matrix",
    "q1_bound",
]

_MAX_SWAPS = 10000
_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RRQRResult:
    """``M[:, perm] = Q R`` with ``R = [[A_k, B_k], [0, C_k]]`` and ``T = A_k^{-1} B_k``."""

    k: int
    perm: np.ndarray
    T: np.ndarray
    R_diag: np.ndarray
    R: np.ndarray
    swaps: int = 0

    @property
    def A_k(self):
        return self.R[:self.k, :self.k]

    @property
    def C_k(self):
        return self.R[self.k:, self.k:]


@dataclass(frozen=True)
class IDResult:
    """``M ~= M[:, skeleton] @ P``; ``P[:, skeleton]`` is exactly the identity."""

    skeleton: np.ndarray
    P: np.ndarray
    achieved_tol: float
    rrqr: RRQRResult | None = None

    @property
    def k(self) -> int:
        return self.skeleton.size


def q1_bound(k: int, n: int, f: float) -> float:
    return float(np.sqrt(1.0 + f * f * k * (n - k)))


def _numerical_rank(diag, tol):
    if diag.size == 0 or diag[0] == 0.0:
        return 0
    small = np.nonzero(diag <= tol * diag[0])[0]
    return int(small[0]) if small.size else diag.size


def strong_rrqr(M, f: float = 2.0, tol: float = 1e-12, rank: int | None = None) -> RRQRResult:
    """Strong RRQR of ``M``; ``rank`` overrides the tolerance-based rank choice.

    The relative tolerance is floored at ``eps * max(m, n)``: diagonal entries
    below that level are roundoff, and keeping them makes ``A_k`` numerically
    singular so the swap loop cannot settle.
    """
    M = np.asarray(M)
    if M.ndim != 2:
        raise InvalidInputError("strong_rrqr needs a 2-D array")
    if f < 1:
        raise InvalidInputError("f must be >= 1")
    if tol < 0:
        raise InvalidInputError("tol must be >= 0")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix has non-finite entries")
    m, n = M.shape
    if not np.iscomplexobj(M):
        M = M.astype(float, copy=False)
    if m == 0 or n == 0 or not np.any(M):
        R = np.zeros((min(m, n), n), dtype=M.dtype)
        return RRQRResult(0, np.arange(n), np.zeros((0, n), dtype=M.dtype),
                          np.zeros(min(m, n)), R)

    _, R, perm = sla.qr(M, mode="economic", pivoting=True)
    floor = np.finfo(float).eps * max(m, n)
    k = _numerical_rank(np.abs(np.diag(R)), max(tol, floor)) if rank is None else min(int(rank), min(m, n))

    swaps = 0
    f2 = f * f * (1.0 + 1e-12)
    while 0 < k < n and swaps < _MAX_SWAPS:
        # rho is scale invariant; normalising avoids overflow for tiny inputs
        Rs = R / abs(R[0, 0])
        Ak = Rs[:k, :k]
        T = sla.solve_triangular(Ak, Rs[:k, k:])
        Ainv = sla.solve_triangular(Ak, np.eye(k, dtype=R.dtype))
        inv_row = np.einsum("ij,ij->i", Ainv.conj(), Ainv).real
        gamma2 = np.einsum("ij,ij->j", Rs[k:, k:].conj(), Rs[k:, k:]).real
        rho2 = np.abs(T) ** 2 + inv_row[:, None] * gamma2[None, :]
        flat = int(np.argmax(rho2))  # first maximum: lowest (i, j)
        i, j = divmod(flat, n - k)
        if rho2[i, j] <= f2:
            break
        perm[[i, k + j]] = perm[[k + j, i]]
        _, R = sla.qr(M[:, perm], mode="economic")
        swaps += 1

    if swaps >= _MAX_SWAPS:
        _log.warning("strong RRQR stopped after %d swaps; |T| may exceed f", swaps)
    if 0 < k < n:
        Rs = R / abs(R[0, 0])
        T = sla.solve_triangular(Rs[:k, :k], Rs[:k, k:])
    else:
        T = np.zeros((k, n - k), dtype=R.dtype)
    return RRQRResult(k, np.asarray(perm), T, np.abs(np.diag(R)), R, swaps)


def interp_decompose(M, f: float = 2.0, tol: float = 1e-12) -> IDResult:
    """Column ID from a strong RRQR: ``M ~= M[:, skeleton] @ P``."""
    M = np.asarray(M)
    res = strong_rrqr(M, f, tol)
    n = M.shape[1]
    k = res.k
    P = np.zeros((k, n), dtype=res.R.dtype)
    skel = res.perm[:k]
    P[:, skel] = np.eye(k)
    P[:, res.perm[k:]] = res.T
    total = np.linalg.norm(M)
    resid = np.linalg.norm(res.R[k:, k:]) if k < min(M.shape) else 0.0
    achieved = float(resid / total) if total > 0 else 0.0
    return IDResult(skeleton=np.asarray(skel), P=P, achieved_tol=achieved, rrqr=res)


def row_interp_decompose(M, f: float = 2.0, tol: float = 1e-12):
    """Row ID ``M ~= U @ M[skeleton, :]``; returns ``(skeleton, U, achieved_tol)``."""
    res = interp_decompose(np.asarray(M).T, f, tol)
    return res.skeleton, res.P.T, res.achieved_tol


def proxy_matrix(access, idx, proxy, side: str) -> np.ndarray:
    """Interactions between cloud points ``idx`` and a proxy surface.

    ``side="row"`` gives columns (functions of the targets ``idx``),
    ``side="col"`` gives rows (functions of the weighted sources ``idx``).
    In 1D the proxy sits in the complex plane and uses the Cauchy kernel,
    split into real and imaginary parts.
    """
    pts = access.points[idx]
    scale = access.mean_weight
    if pts.shape[1] == 1:
        z = proxy.points[:, 0] + 1j * proxy.points[:, 1]
        cauchy = 1.0 / (z[None, :] - pts[:, 0][:, None])
        blk = np.concatenate([cauchy.real, cauchy.imag], axis=1)
        if side == "row":
            return scale * blk
        return (blk * access.weights[idx][:, None]).T
    if side == "row":
        blk = scale * access.target_field(idx, proxy.points)
        if access.spec.family == "log2d":
            blk = np.concatenate([blk, np.full((len(idx), 1), scale)], axis=1)
        return blk
    blk = access.source_field(proxy.points, idx)
    if access.spec.family == "log2d":
        blk = np.concatenate([blk, access.weights[idx][None, :]], axis=0)
    return blk


def _outside(proxy, lo, hi):
    if proxy.points.shape[1] != lo.shape[0]:
        # 1D boxes with a complex-plane proxy: compare against the interval only
        c = proxy.center[0]
        return proxy.radius > 0.5 * (hi[0] - lo[0]) and lo[0] <= c <= hi[0]
    inside = np.all((proxy.points >= lo) & (proxy.points <= hi), axis=1)
    return not np.any(inside)


def proxy_id(access, idx, explicit, proxy, box, f: float = 2.0, tol: float = 1e-12,
             side: str = "row") -> IDResult:
    """ID of block ``idx`` against explicit far indices plus a proxy surface.

    For ``side="row"`` the skeleton selects rows of ``A[idx, :]``; for
    ``side="col"`` it selects columns of ``A[:, idx]``. Skeleton entries are
    positions within ``idx``. With ``proxy=None`` only the explicit
    indices are used.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if proxy is None:
        idx = np.asarray(idx, dtype=np.int64)
        explicit = np.asarray(explicit, dtype=np.int64)
        if side == "row":
            return interp_decompose(access.block(idx, explicit).T, f, tol)
        return interp_decompose(access.block(explicit, idx), f, tol)
    if not _outside(proxy, lo, hi):
        raise InvalidInputError("proxy surface does not enclose the block box")
    idx = np.asarray(idx, dtype=np.int64)
    explicit = np.asarray(explicit, dtype=np.int64)
    if side == "row":
        parts = [access.block(idx, explicit)] if explicit.size else []
        parts.append(proxy_matrix(access, idx, proxy, "row"))
        M = np.concatenate(parts, axis=1)
        return interp_decompose(M.T, f, tol)
    parts = [access.block(explicit, idx)] if explicit.size else []
    parts.append(proxy_matrix(access, idx, proxy, "col"))
    M = np.concatenate(parts, axis=0)
    return interp_decompose(M, f, tol)
