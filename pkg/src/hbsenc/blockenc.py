"""Classical simulation of block encodings and the recursive HBS encoding.

A block encoding is simulated by an explicit unitary whose top-left block
equals ``M / alpha``. Factors are zero-padded to a common ``N x N`` frame and
dilated with one logical ancilla. Products (QMM) and weighted sums (LCU)
are composed exactly; once the composed unitary would exceed
``UNITARY_LIMIT`` rows, the composed top-left block is dilated again so
the payload stays a genuine unitary while the logical ancilla count is
tracked as bookkeeping.

Subnormalisations are carried as exact rationals (``fractions.Fraction`` of
the floating-point inputs) so the built descriptor can be compared with
the closed form without rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError
from .hbs import HBSFactors
from .io import atomic_write_text, read_triplet, write_triplet
from .sparsify import SparseMatrix, sparsity_profile

__all__ = [
    "Payload",
    "EncodingDescriptor",
    "PrepPair",
    "AlphaPrediction",
    "dilate",
    "encode_sparse",
    "qmm",
    "lcu",
    "recursive_encode",
    "predict_alpha",
    "predict_alpha_recursive",
    "predict_eps",
    "predict_eps_recursive",
    "powerlaw_factor_alphas",
    "plateau_threshold",
    "extraction_error",
    "unitarity_residual",
    "pad",
    "write_descriptor",
    "read_descriptor",
    "UNITARY_LIMIT",
    "PAYLOAD_LIMIT",
]

UNITARY_LIMIT = 4096
PAYLOAD_LIMIT = 256
_SPARSE_PAYLOAD_LIMIT = 2048


@dataclass(frozen=True)
class Payload:
    """Unitary ``U`` and its top-left ``shape`` block (the encoded ``M / alpha``)."""

    unitary: np.ndarray
    shape: tuple

    @property
    def block(self) -> np.ndarray:
        m, n = self.shape
        return self.unitary[:m, :n]


@dataclass(frozen=True)
class EncodingDescriptor:
    """``(alpha, a, eps)`` block encoding, optionally with an explicit payload.

    ``alpha_exact`` is the exact rational subnormalisation; ``alpha`` its float.
    ``eps_recursion`` holds the level-recursion error estimate where one applies.
    """

    alpha_exact: Fraction
    ancillas: int
    eps: float
    payload: Payload | None = None
    shape: tuple = ()
    nnz: int = 0
    eps_recursion: float | None = None
    flags: tuple = ()
    level_alphas: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def alpha(self) -> float:
        return float(self.alpha_exact)

    @property
    def block(self):
        return None if self.payload is None else self.payload.block


@dataclass(frozen=True)
class PrepPair:
    """Coefficients ``y`` with ``beta >= sum |y_j|`` and preparation error ``gamma``."""

    y: np.ndarray
    beta: float | None = None
    gamma: float = 0.0

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=complex))
        object.__setattr__(self, "y", y)
        l1 = float(np.sum(np.abs(y)))
        if self.beta is None:
            object.__setattr__(self, "beta", l1)
        elif self.beta < l1 * (1 - 1e-15):
            raise InvalidInputError("beta must be at least the 1-norm of y")
        if self.gamma < 0:
            raise InvalidInputError("gamma must be non-negative")


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(float(x))


def unitarity_residual(U) -> float:
    """``||U^H U - I||_2``; the residual is Hermitian, so its eigenvalues give the norm."""
    U = np.asarray(U)
    ev = np.linalg.eigvalsh(U.conj().T @ U - np.eye(U.shape[1]))
    return float(np.abs(ev).max(initial=0.0))


def extraction_error(M, desc: EncodingDescriptor) -> float:
    """``||M - alpha * block||_2`` for a payload-bearing descriptor."""
    if desc.payload is None:
        raise InvalidInputError("descriptor has no payload")
    M = np.asarray(M.toarray() if sp.issparse(M) else M)
    blk = desc.payload.block
    m, n = M.shape
    return float(np.linalg.norm(M - desc.alpha * blk[:m, :n], 2))


def pad(M, n: int) -> np.ndarray:
    """Zero-pad ``M`` into the top-left corner of an ``n x n`` matrix."""
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    if M.shape[0] > n or M.shape[1] > n:
        raise InvalidInputError(f"cannot pad a {M.shape} matrix to {n}x{n}")
    out = np.zeros((n, n), dtype=complex)
    out[:M.shape[0], :M.shape[1]] = M
    return out


def _unitary_from_block(B) -> np.ndarray:
    # [[B, sqrt(I - B B^H)], [sqrt(I - B^H B), -B^H]] from one SVD of B
    B = np.asarray(B, dtype=complex)
    m, n = B.shape
    W, s, Vh = np.linalg.svd(B)
    sm = np.zeros(m)
    sn = np.zeros(n)
    sm[:s.size] = s
    sn[:s.size] = s
    cm = np.sqrt(np.clip(1.0 - sm * sm, 0.0, None))
    cn = np.sqrt(np.clip(1.0 - sn * sn, 0.0, None))
    V = Vh.conj().T
    top_right = (W * cm) @ W.conj().T
    bottom_left = (V * cn) @ Vh
    U = np.zeros((m + n, m + n), dtype=complex)
    U[:m, :n] = B
    U[:m, n:] = top_right
    U[m:, :n] = bottom_left
    U[m:, n:] = -B.conj().T
    return U


def dilate(M, alpha) -> EncodingDescriptor:
    """Exact one-ancilla dilation of ``M / alpha``."""
    M = np.atleast_2d(M.toarray() if sp.issparse(M) else np.asarray(M)).astype(complex)
    alpha_f = float(alpha)
    if not alpha_f > 0:
        raise InvalidInputError("alpha must be positive")
    norm = float(np.linalg.norm(M, 2)) if M.size else 0.0
    if norm > alpha_f * (1 + 1e-12):
        raise InvalidInputError(f"alpha = {alpha_f:.6g} is below ||M||_2 = {norm:.6g}")
    U = _unitary_from_block(M / alpha_f)
    payload = Payload(U, M.shape)
    eps = float(np.linalg.norm(M - alpha_f * payload.block, 2)) if M.size else 0.0
    return EncodingDescriptor(alpha_exact=_frac(alpha), ancillas=1, eps=eps, payload=payload,
                              shape=M.shape, nnz=int(np.count_nonzero(M)))


def encode_sparse(A, payload: bool | None = None) -> EncodingDescriptor:
    """Sparse-oracle encoding with ``alpha = c_sp sqrt(s_r s_c)``."""
    m = A.csr if isinstance(A, SparseMatrix) else sp.csr_matrix(A)
    s_r, s_c, c = sparsity_profile(m)
    alpha = _frac(c) * _frac(math.sqrt(s_r * s_c)) if c > 0 else Fraction(1)
    if payload is None:
        payload = max(m.shape) <= _SPARSE_PAYLOAD_LIMIT
    if payload:
        d = dilate(m.toarray(), alpha)
        return replace(d, nnz=int(m.nnz))
    return EncodingDescriptor(alpha_exact=alpha, ancillas=1, eps=0.0, shape=m.shape,
                              nnz=int(m.nnz), flags=("prediction-only",))


def _compose_product(pu: Payload, pv: Payload, n: int):
    Uu, Uv = pu.unitary, pv.unitary
    if Uu.shape[0] % n or Uv.shape[0] % n:
        return None
    au, av = Uu.shape[0] // n, Uv.shape[0] // n
    if au * av * n > UNITARY_LIMIT:
        return None
    # index order (ancilla_v, ancilla_u, system); U acts on the last two
    U4 = Uu.reshape(au, n, au, n)
    V4 = Uv.reshape(av, n, av, n)
    W = np.tensordot(U4, V4, axes=([3], [1]))  # (u, s, w, a, b, t)
    N = au * av * n
    return W.transpose(3, 0, 1, 4, 2, 5).reshape(N, N)


def qmm(U: EncodingDescriptor, V: EncodingDescriptor) -> EncodingDescriptor:
    """Encoding of the product of the matrices encoded by ``U`` and ``V``."""
    if U.shape and V.shape and U.shape[1] != V.shape[0]:
        raise InvalidInputError(f"cannot multiply encodings of shapes {U.shape} and {V.shape}")
    alpha = U.alpha_exact * V.alpha_exact
    eps = U.alpha * V.eps + V.alpha * U.eps
    shape = (U.shape[0], V.shape[1]) if U.shape and V.shape else ()
    payload = None
    if U.payload is not None and V.payload is not None:
        blk = U.payload.block @ V.payload.block
        n = U.shape[0] if U.shape[0] == U.shape[1] == V.shape[1] else None
        W = _compose_product(U.payload, V.payload, n) if n else None
        payload = Payload(W, shape) if W is not None else Payload(_unitary_from_block(blk), shape)
    return EncodingDescriptor(alpha_exact=alpha, ancillas=U.ancillas + V.ancillas, eps=eps,
                              payload=payload, shape=shape, nnz=U.nnz + V.nnz,
                              flags=tuple(sorted(set(U.flags) | set(V.flags))))


def _prep_unitary(p):
    # Householder reflection mapping e_0 to the real unit vector p
    p = np.asarray(p, dtype=float)
    v = p.copy()
    v[0] -= 1.0
    nv = float(v @ v)
    if nv < 1e-30:
        return np.eye(p.size)
    return np.eye(p.size) - 2.0 * np.outer(v, v) / nv


def _compose_lcu(payloads, coeffs, n):
    m = len(payloads)
    q = 1 << max(0, (m - 1).bit_length())
    anc = max(P.unitary.shape[0] // n for P in payloads)
    if any(P.unitary.shape[0] % n for P in payloads) or q * anc * n > UNITARY_LIMIT:
        return None
    mags = np.abs(coeffs)
    total = mags.sum()
    amp = np.zeros(q)
    amp[:m] = np.sqrt(mags / total)
    prep = _prep_unitary(amp)
    dim = anc * n
    blocks = np.zeros((q, dim, dim), dtype=complex)
    for j in range(q):
        if j < m:
            Uj = payloads[j].unitary
            aj = Uj.shape[0] // n
            # extend with identity on the unused ancilla states
            blocks[j] = np.eye(dim)
            blocks[j, :aj * n, :aj * n] = Uj
            if mags[j] > 0:
                blocks[j] *= coeffs[j] / mags[j]
        else:
            blocks[j] = np.eye(dim)
    # (prep^H (x) I) blockdiag(select) (prep (x) I)
    W = np.einsum("ji,jk,jxy->ixky", prep.conj(), prep, blocks, optimize=True)
    return W.reshape(q * dim, q * dim)


def lcu(encodings, prep: PrepPair) -> EncodingDescriptor:
    """Weighted sum ``sum_j y_j M_j`` of encoded matrices.

    Heterogeneous subnormalisations are absorbed into the coefficients
    ``y_j alpha_j``, giving ``alpha = sum |y_j| alpha_j`` and
    ``eps = max_j(alpha_j) gamma + sum |y_j| eps_j``.
    """
    encodings = list(encodings)
    if len(encodings) == 0 or len(encodings) != prep.y.size:
        raise InvalidInputError("need one coefficient per encoding")
    shapes = {e.shape for e in encodings if e.shape}
    if len(shapes) > 1:
        raise InvalidInputError(f"encodings have different shapes {sorted(shapes)}")
    shape = shapes.pop() if shapes else ()
    y = prep.y
    ys = []
    for v in y:
        if v.imag == 0:
            ys.append(_frac(abs(v.real)))
        else:
            ys.append(_frac(abs(v)))
    alpha = sum((yy * e.alpha_exact for yy, e in zip(ys, encodings)), Fraction(0))
    amax = max(e.alpha for e in encodings)
    eps = amax * prep.gamma + sum(float(abs(v)) * e.eps for v, e in zip(y, encodings))
    n_sel = max(0, (len(encodings) - 1).bit_length())
    ancillas = max(e.ancillas for e in encodings) + n_sel
    payload = None
    if all(e.payload is not None for e in encodings) and alpha > 0:
        c = np.array([v * e.alpha for v, e in zip(y, encodings)], dtype=complex)
        blk = sum(cj * e.payload.block for cj, e in zip(c, encodings)) / float(alpha)
        n = shape[0] if shape and shape[0] == shape[1] else None
        W = _compose_lcu([e.payload for e in encodings], c, n) if n else None
        payload = Payload(W, shape) if W is not None else Payload(_unitary_from_block(blk), shape)
    return EncodingDescriptor(alpha_exact=alpha, ancillas=ancillas, eps=float(eps), payload=payload,
                              shape=shape, nnz=sum(e.nnz for e in encodings),
                              flags=tuple(sorted(set().union(*[set(e.flags) for e in encodings]))))


def _perturbed(M, eps, rng):
    if eps == 0:
        return M
    G = rng.standard_normal(M.shape) + 1j * rng.standard_normal(M.shape)
    return M + eps * G / np.linalg.norm(G, 2)


def _factor_encoding(M, n, alpha, eps, rng, build):
    """Encoding of one padded factor, optionally with an injected error of norm ``eps``."""
    if not build:
        return EncodingDescriptor(alpha_exact=alpha, ancillas=1, eps=eps, shape=(n, n),
                                  nnz=int(M.nnz), flags=("prediction-only",))
    M0 = M.toarray().astype(complex)
    Me = _perturbed(M0, eps, rng)
    if eps:
        # realised perturbation, including the rounding of M + E
        eps = max(eps, float(np.linalg.norm(Me - M0, 2)))
    norm = np.linalg.norm(Me, 2)
    if norm > float(alpha):
        # injected error pushed the norm above the sparse-oracle bound
        alpha = _frac(norm * (1 + 1e-12))
    d = dilate(pad(Me, n), alpha)
    # distance to the unperturbed factor: injected norm plus dilation roundoff
    return replace(d, eps=eps + d.eps, nnz=int(M.nnz))


def _sparse_alpha(M) -> Fraction:
    s_r, s_c, c = sparsity_profile(M)
    if c == 0:
        return Fraction(1)
    return _frac(c) * _frac(math.sqrt(s_r * s_c))


def recursive_encode(factors: HBSFactors, per_factor_eps: float | None = None, seed: int = 0,
                     payload_limit: int = PAYLOAD_LIMIT) -> EncodingDescriptor:
    """Bottom-up encoding of ``D_1 + L_1(D_2 + ...)R_1``.

    Each level combines ``qmm(U_L, qmm(A_{l+1}, U_R))`` with ``U_D`` by LCU.
    ``L_l`` and ``R_l`` share the subnormalisation ``max(alpha(L_l), alpha(R_l))``.
    ``per_factor_eps=None`` uses the measured dilation roundoff; a positive
    value injects a random perturbation of that spectral norm into every
    factor. Above ``payload_limit`` the descriptor carries predictions only.

    The returned ``eps`` follows the closed-form error expression; the
    level recursion value is stored in ``eps_recursion``.
    """
    n = factors.n
    build = n <= payload_limit
    rng = np.random.default_rng(seed)
    inject = 0.0 if per_factor_eps is None else float(per_factor_eps)
    if inject < 0:
        raise InvalidInputError("per_factor_eps must be non-negative")
    lam = factors.depth
    aD = [_sparse_alpha(m) for m in factors.D]
    aL = [max(_sparse_alpha(factors.L[l]), _sparse_alpha(factors.R[l])) for l in range(lam)]

    encD = [_factor_encoding(m, n, a, inject, rng, build) for m, a in zip(factors.D, aD)]
    encL, encR = [], []
    for l in range(lam):
        eL = _factor_encoding(factors.L[l], n, aL[l], inject, rng, build)
        eR = _factor_encoding(factors.R[l], n, aL[l], inject, rng, build)
        # keep alpha_L = alpha_R even when one of them had to grow
        shared = max(eL.alpha_exact, eR.alpha_exact)
        eL, eR = _rescale(eL, shared), _rescale(eR, shared)
        aL[l] = shared
        encL.append(eL)
        encR.append(eR)
    aD = [e.alpha_exact for e in encD]

    eps_used = max([e.eps for e in encD + encL + encR], default=inject)
    cur = encD[-1]
    unit = PrepPair([1.0, 1.0])
    for l in range(lam - 1, -1, -1):
        prod = qmm(encL[l], qmm(cur, encR[l]))
        cur = lcu([encD[l], prod], unit)
    eps_closed = predict_eps(aD, aL, eps_used)
    eps_rec = predict_eps_recursive(aD, aL, eps_used)
    flags = tuple(sorted(set(cur.flags) | ({"prediction-only"} if not build else set())))
    return replace(cur, eps=float(eps_closed), eps_recursion=float(eps_rec), flags=flags,
                   level_alphas={"D": tuple(aD), "L": tuple(aL), "eps_factor": eps_used})


def _rescale(desc: EncodingDescriptor, alpha: Fraction) -> EncodingDescriptor:
    """Same encoded matrix under a larger subnormalisation."""
    if desc.alpha_exact == alpha:
        return desc
    if desc.payload is None:
        return replace(desc, alpha_exact=alpha)
    blk = desc.payload.block * (desc.alpha / float(alpha))
    U = _unitary_from_block(blk)
    return replace(desc, alpha_exact=alpha, payload=Payload(U, desc.shape))


@dataclass(frozen=True)
class AlphaPrediction:
    alpha: object
    D_bounds: tuple = ()
    L_bounds: tuple = ()

    def __float__(self):
        return float(self.alpha)


def predict_alpha(alpha_D, alpha_L, dims=None, c_sp=None, f=None, d=None):
    """Closed-form ``alpha_A = sum_l alpha_D[l] prod_{m<l} alpha_L[m]^2``.

    Exact when the inputs are integers or ``Fraction``s. With ``dims``
    (per-level ``(n_l, k_l)``), ``c_sp``, ``f`` and ``d`` the a-priori bounds
    on the factor subnormalisations are returned too.
    """
    alpha_D = list(alpha_D)
    alpha_L = list(alpha_L)
    if len(alpha_D) != len(alpha_L) + 1:
        raise InvalidInputError("need len(alpha_D) == len(alpha_L) + 1")
    exact = all(isinstance(a, (int, Fraction)) for a in alpha_D + alpha_L)
    total = Fraction(0) if exact else 0.0
    prod = Fraction(1) if exact else 1.0
    for l, aD in enumerate(alpha_D):
        total += aD * prod
        if l < len(alpha_L):
            prod *= alpha_L[l] * alpha_L[l]
    Db, Lb = (), ()
    if dims is not None and c_sp is not None and d is not None:
        Db = tuple((3 ** d if l == 0 else 6 ** d - 3 ** d) * dims[l][0] * c_sp
                   for l in range(min(len(dims), len(alpha_D))))
        if f is not None:
            Lb = tuple(f * math.sqrt(dims[l][1] * (dims[l][0] - dims[l][1] + 1))
                       for l in range(min(len(dims), len(alpha_L))))
    return AlphaPrediction(total, Db, Lb)


def predict_alpha_recursive(alpha_D, alpha_L):
    """``alpha_l = alpha_{l+1} alpha_L[l]^2 + alpha_D[l]`` evaluated bottom-up."""
    alpha_D = list(alpha_D)
    alpha_L = list(alpha_L)
    if len(alpha_D) != len(alpha_L) + 1:
        raise InvalidInputError("need len(alpha_D) == len(alpha_L) + 1")
    a = alpha_D[-1]
    for l in range(len(alpha_L) - 1, -1, -1):
        a = a * alpha_L[l] * alpha_L[l] + alpha_D[l]
    return a


def predict_eps(alpha_D, alpha_L, eps):
    """Closed-form error of the recursive encoding with per-factor error ``eps``.

    ``[sum_l (2 aL_l sum_{j>=l} aD_j P_{j-1} + 1) P_{l-1} + P_lam] eps`` with
    ``P_k = prod_{m<=k} aL_m^2``. For ``aL >= 1`` this dominates the level
    recursion of :func:`predict_eps_recursive`.
    """
    alpha_D = list(alpha_D)
    alpha_L = list(alpha_L)
    lam = len(alpha_L)
    if len(alpha_D) != lam + 1:
        raise InvalidInputError("need len(alpha_D) == len(alpha_L) + 1")
    if eps < 0:
        raise InvalidInputError("eps must be non-negative")
    P = [1.0]
    for a in alpha_L:
        P.append(P[-1] * float(a) ** 2)
    total = 0.0
    for l in range(lam):
        inner = sum(float(alpha_D[j]) * P[j] for j in range(l, lam + 1))
        total += (2.0 * float(alpha_L[l]) * inner + 1.0) * P[l]
    total += P[lam]
    return total * eps


def predict_eps_recursive(alpha_D, alpha_L, eps, gamma: float = 0.0):
    """Error of the bottom-up construction by its level recursion.

    ``eps_l = aL_l (alpha_{l+1} eps + aL_l eps_{l+1}) + alpha_{l+1} aL_l eps + eps + max(aD_l, aL_l^2 alpha_{l+1}) gamma``
    with ``eps_{lam+1} = eps``.
    """
    alpha_D = [float(a) for a in alpha_D]
    alpha_L = [float(a) for a in alpha_L]
    lam = len(alpha_L)
    if len(alpha_D) != lam + 1:
        raise InvalidInputError("need len(alpha_D) == len(alpha_L) + 1")
    a_next = alpha_D[-1]
    e_next = eps
    for l in range(lam - 1, -1, -1):
        aL = alpha_L[l]
        prod_alpha = aL * aL * a_next
        e = aL * (a_next * eps + aL * e_next) + a_next * aL * eps + eps
        e += max(alpha_D[l], prod_alpha) * gamma
        a_next = alpha_D[l] + prod_alpha
        e_next = e
    return e_next


def plateau_threshold(f: float, r: float, d: int) -> float:
    """``f^2 r (2^d r - r + 1)``; the power-law plateau needs ``2^p`` above it."""
    return f * f * r * (2 ** d * r - r + 1)


def powerlaw_factor_alphas(p: float, lam: int, d: int, r: int, f: float, n1: int | None = None,
                           c: float = 1.0):
    """Model factor subnormalisations for the kernel ``|x - y|^-p``.

    Entries of ``D_l`` shrink like ``2^{-(l-1)p}``; ``n_l = 2^d r`` and
    ``k_l = r`` above the leaves. Returns ``(alpha_D, alpha_L)`` of lengths
    ``lam + 1`` and ``lam``.
    """
    n1 = 2 ** d * r if n1 is None else n1
    aD = []
    for l in range(lam + 1):
        cnt = 3 ** d * n1 if l == 0 else (6 ** d - 3 ** d) * 2 ** d * r
        aD.append(cnt * c * 2.0 ** (-l * p))
    aL = [f * math.sqrt(r * (2 ** d * r - r + 1))] * lam
    return aD, aL


def write_descriptor(path, desc: EncodingDescriptor) -> None:
    """``alpha ancillas eps [payload_file]``; the payload goes to a triplet file beside it."""
    path = Path(path)
    fields = [f"{desc.alpha:.17g}", str(desc.ancillas), f"{desc.eps:.17g}"]
    if desc.payload is not None:
        pfile = path.with_suffix(".payload.txt")
        write_triplet(pfile, desc.payload.unitary)
        fields.append(pfile.name)
        fields += [str(s) for s in desc.payload.shape]
    atomic_write_text(path, " ".join(fields) + "\n")


def read_descriptor(path) -> EncodingDescriptor:
    path = Path(path)
    parts = path.read_text().split()
    if len(parts) not in (3, 6):
        raise InvalidInputError(f"{path}: expected 'alpha ancillas eps [payload_file m n]'")
    alpha, anc, eps = Fraction(float(parts[0])), int(parts[1]), float(parts[2])
    payload = None
    shape = ()
    if len(parts) == 6:
        U = read_triplet(path.parent / parts[3]).toarray()
        shape = (int(parts[4]), int(parts[5]))
        payload = Payload(U, shape)
    return EncodingDescriptor(alpha_exact=alpha, ancillas=anc, eps=eps, payload=payload, shape=shape)
