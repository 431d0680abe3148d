"""Recursive HBS compression, telescoping reconstruction and nonzero accounting.

Frames. Level 1 rows and columns use the original point order. The frame
of level ``l + 1`` lists the level-``l`` skeletons grouped by their
level-``l + 1`` box, so ``L_l`` maps the level-``l + 1`` row frame into
the level-``l`` row frame and ``R_l`` does the same for columns. With
that convention

    A ~= D_1 + L_1 (D_2 + L_2 ( ... D_lam + L_lam D_{lam+1} R_lam ... ) R_2) R_1

holds literally, with no extra permutations.

Entries. Recursive skeletonisation only ever removes near-field entries from ``S``, so
``S_l[i, j]`` is either ``A[i, j]`` or zero. It is zero exactly when the
level-``l`` boxes of ``i`` and ``j`` touch. The compressor therefore never
forms ``S_l``; it reads entries of ``A`` (lazily, from the kernel) and masks
them.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError, SizeGuardError
from .geometry import (
    DEFAULT_PROXY_COUNT,
    DEFAULT_RADIUS_FACTOR,
    SpatialTree,
    build_tree,
    make_proxy,
    mark_near_far,
)
from .io import atomic_write_text, read_triplet, write_triplet
from .kernels import DenseMatrix, DenseSystem, KernelMatrix
from .lowrank import interp_decompose, proxy_id

__all__ = [
    "LevelMap",
    "HBSFactors",
    "FactorStats",
    "hbs_compress",
    "reconstruct",
    "apply",
    "predict_counts",
    "proxy_supported",
    "save_factors",
    "load_factors",
    "RECONSTRUCT_LIMIT",
]

log = logging.getLogger(__name__)

RECONSTRUCT_LIMIT = 4096
_DENSE_REMAINDER_LIMIT = 4096 * 4096


@dataclass(frozen=True)
class LevelMap:
    """Index bookkeeping for one compression level.

    ``row_blocks[b]`` holds the level-``l`` frame positions of block ``b``;
    ``row_skel[b]`` the subset kept as skeletons. ``row_next[b]`` gives the
    positions those skeletons take in the next frame. Columns likewise.
    """

    tree_blocks_rows: np.ndarray
    tree_blocks_cols: np.ndarray
    row_blocks: tuple
    col_blocks: tuple
    row_skel: tuple
    col_skel: tuple
    row_next: tuple
    col_next: tuple


@dataclass(frozen=True)
class FactorStats:
    nnz_total: int
    nnz_per_factor: tuple
    max_rank: int
    runtime_seconds: float
    entry_bound: float
    proxy_used: bool = False
    # blocks whose ID kept every index (tolerance not reached below full rank)
    saturated_blocks: int = 0

    @property
    def c_sp(self) -> float:
        return self.entry_bound


@dataclass(frozen=True)
class HBSFactors:
    """Telescoping factors ``{D_l}, {L_l}, {R_l}`` of depth ``lam``.

    ``row_ids[l]`` / ``col_ids[l]`` list the original indices of the frame of
    level ``l + 1`` (``row_ids[0]`` is ``0..N-1``). ``dims[l]`` records
    ``(p_l, n_l, k_l)`` with ``n_l`` and ``k_l`` the largest block size and
    rank over rows and columns at level ``l + 1``.
    """

    n: int
    D: tuple
    L: tuple
    R: tuple
    maps: tuple
    row_ids: tuple
    col_ids: tuple
    dims: tuple
    f: float
    tol: float
    d: int
    tree: SpatialTree | None = field(default=None, repr=False)

    @property
    def depth(self) -> int:
        return len(self.L)

    lam = depth

    @property
    def dtype(self):
        return np.result_type(*[m.dtype for m in self.D + self.L + self.R])

    def ranks(self, l: int):
        """Per-block (row, column) ranks at level ``l`` (1-based)."""
        m = self.maps[l - 1]
        return [s.size for s in m.row_skel], [s.size for s in m.col_skel]


def proxy_supported(access) -> bool:
    spec = getattr(access, "spec", None)
    cloud = getattr(access, "cloud", None)
    if spec is None or cloud is None or not isinstance(access, KernelMatrix):
        return False
    d = cloud.d
    if d == 1:
        return True
    if d == 2:
        return spec.family in ("log2d", "hankel2d")
    return spec.family in ("coulomb3d", "helmholtz3d") or (spec.family == "powerlaw" and spec.p == 1)


def _resolve_access(system, weights=None):
    if isinstance(system, DenseSystem):
        dense = DenseMatrix(system.matrix, system.cloud)
        lazy = KernelMatrix(system.kernel, system.cloud, system.weights) if system.kernel else None
        return dense, lazy, system.cloud
    if isinstance(system, KernelMatrix):
        return system, system, system.cloud
    if isinstance(system, tuple):
        spec, cloud, w = system
        km = KernelMatrix(spec, cloud, w)
        return km, km, cloud
    if isinstance(system, DenseMatrix):
        return system, None, system.cloud
    a = np.asarray(system)
    return DenseMatrix(a), None, None


def _group(owner_of_active, nblocks):
    """Positions of each tree block inside an active frame, in block order."""
    order = np.argsort(owner_of_active, kind="stable")
    present = np.unique(owner_of_active)
    bounds = np.searchsorted(owner_of_active[order], np.concatenate([present, [nblocks]]))
    groups = tuple(order[bounds[i]:bounds[i + 1]] for i in range(present.size))
    return present, groups


def _touch(ga, gb):
    return np.all(np.abs(ga[:, None, :] - gb[None, :, :]) <= 1, axis=2)


class _Compressor:
    def __init__(self, access, proxy_access, tree, near_far, f, tol, use_proxy,
                 proxy_m, radius_factor):
        self.A = access
        self.P = proxy_access
        self.tree = tree
        self.nf = near_far
        self.f = f
        self.tol = tol
        self.use_proxy = use_proxy
        d = tree.cloud.d
        self.proxy_m = proxy_m or DEFAULT_PROXY_COUNT[d]
        self.radius_factor = radius_factor
        self.points = tree.cloud.points
        self.grids = [np.array([b.grid for b in lvl.blocks], dtype=np.int64) for lvl in tree.levels]

    def live_mask(self, rid, cid, l):
        """Entries of ``S_l`` that are still present (boxes at level ``l`` do not touch)."""
        if l < 1:
            return np.ones((rid.size, cid.size), dtype=bool)
        lvl = self.tree.level(l)
        g = self.grids[l - 1]
        return ~_touch(g[lvl.owner[rid]], g[lvl.owner[cid]])

    def entries(self, rid, cid, l):
        blk = self.A.block(rid, cid)
        if l >= 1:
            blk = np.where(self.live_mask(rid, cid, l), blk, 0)
        return blk

    def _id(self, idx_ids, far_ids, box, side):
        if far_ids.size == 0:
            z = np.zeros((0, idx_ids.size))
            return np.zeros(0, dtype=np.int64), (z.T if side == "row" else z)
        if self.use_proxy:
            lo, hi = box.lo, box.hi
            prx = make_proxy(lo, hi, self.proxy_m, self.radius_factor)
            centre = 0.5 * (lo + hi)
            dist = np.linalg.norm(self.points[far_ids] - centre, axis=1)
            explicit = far_ids[dist < prx.radius]
            res = proxy_id(self.P, idx_ids, explicit, prx, (lo, hi), self.f, self.tol, side=side)
        else:
            if side == "row":
                res = interp_decompose(self.A.block(idx_ids, far_ids).T, self.f, self.tol)
            else:
                res = interp_decompose(self.A.block(far_ids, idx_ids), self.f, self.tol)
        return res.skeleton, (res.P.T if side == "row" else res.P)

    def level(self, l, rid, cid):
        lvl = self.tree.level(l)
        nblk = len(lvl.blocks)
        rown = lvl.owner[rid]
        coln = lvl.owner[cid]
        rpresent, rgroups = _group(rown, nblk)
        cpresent, cgroups = _group(coln, nblk)

        # near field of S_{l-1}
        rows, cols, vals = [], [], []
        cpos = {b: i for i, b in enumerate(cpresent)}
        for bi, b in enumerate(rpresent):
            rpos = rgroups[bi]
            for q in self.nf.near_of(l, b):
                ci = cpos.get(int(q))
                if ci is None:
                    continue
                cp = cgroups[ci]
                blk = self.entries(rid[rpos], cid[cp], l - 1)
                ii, jj = np.nonzero(blk)
                rows.append(rpos[ii])
                cols.append(cp[jj])
                vals.append(blk[ii, jj])
        D = _coo(rows, cols, vals, (rid.size, cid.size), self.A.dtype)

        far_any = False
        row_skel, row_U = [], []
        for bi, b in enumerate(rpresent):
            near = np.zeros(nblk, dtype=bool)
            near[self.nf.near_of(l, b)] = True
            far_ids = cid[~near[coln]]
            far_any |= far_ids.size > 0
            s, U = self._id(rid[rgroups[bi]], far_ids, lvl.blocks[b], "row")
            row_skel.append(s)
            row_U.append(U)
        col_skel, col_V = [], []
        for bi, b in enumerate(cpresent):
            near = np.zeros(nblk, dtype=bool)
            near[self.nf.near_of(l, b)] = True
            far_ids = rid[~near[rown]]
            s, V = self._id(cid[cgroups[bi]], far_ids, lvl.blocks[b], "col")
            col_skel.append(s)
            col_V.append(V)
        return dict(D=D, far_any=far_any, rpresent=rpresent, cpresent=cpresent,
                    rgroups=rgroups, cgroups=cgroups, row_skel=row_skel, row_U=row_U,
                    col_skel=col_skel, col_V=col_V)


def _coo(rows, cols, vals, shape, dtype):
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0, dtype=dtype)
    return sp.csr_matrix((v.astype(dtype, copy=False), (r, c)), shape=shape)


def _next_frame(groups, skels, present, tree, l, ids):
    """Order skeletons by their level-(l+1) parent; return new ids and per-block positions."""
    if l < tree.depth:
        parents = np.array([tree.level(l).blocks[b].parent for b in present], dtype=np.int64)
    else:
        parents = np.zeros(len(present), dtype=np.int64)
    order = np.argsort(parents, kind="stable")
    new_ids = []
    nxt = [None] * len(present)
    pos = 0
    for bi in order:
        sk = groups[bi][skels[bi]]
        new_ids.append(ids[sk])
        nxt[bi] = np.arange(pos, pos + sk.size)
        pos += sk.size
    new_ids = np.concatenate(new_ids) if new_ids else np.zeros(0, dtype=np.int64)
    return new_ids, tuple(nxt)


def hbs_compress(system, tree: SpatialTree | None = None, near_far=None, f: float = 2.0,
                 tol: float = 1e-10, use_proxy: bool = True, leaf_size: int = 64,
                 proxy_m: int | None = None, radius_factor: float = DEFAULT_RADIUS_FACTOR,
                 max_levels: int | None = None):
    """Build HBS factors by recursive skeletonisation on a spatial tree.

    ``system`` may be a :class:`DenseSystem`, a :class:`KernelMatrix` (entries
    evaluated on demand), a ``(KernelSpec, PointCloud, weights)`` tuple, or a
    bare square array together with ``tree``. The proxy shortcut needs a kernel
    with a valid proxy representation; otherwise it is switched off with a log
    message.

    Returns ``(HBSFactors, FactorStats)``.
    """
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    if f < 1:
        raise InvalidInputError("f must be >= 1")
    t0 = time.perf_counter()
    access, lazy, cloud = _resolve_access(system)
    n = access.shape[0]
    if tree is None:
        if cloud is None:
            raise InvalidInputError("a spatial tree or point cloud is required")
        tree = build_tree(cloud, leaf_size)
    if tree.cloud.n != n:
        raise InvalidInputError(f"tree covers {tree.cloud.n} points but the matrix has {n} rows")
    if near_far is None:
        near_far = mark_near_far(tree)
    if use_proxy and not proxy_supported(lazy):
        log.info("proxy compression unavailable for this input; using full far field")
        use_proxy = False

    comp = _Compressor(access, lazy, tree, near_far, f, tol, use_proxy, proxy_m, radius_factor)
    rid = np.arange(n)
    cid = np.arange(n)
    D, L, R, maps, dims = [], [], [], [], []
    row_ids, col_ids = [rid], [cid]
    incompressible = []
    limit = tree.depth - 1 if max_levels is None else min(max_levels, tree.depth - 1)
    l = 1
    while l <= limit and rid.size and cid.size:
        out = comp.level(l, rid, cid)
        if not out["far_any"]:
            break
        full = all(s.size == g.size for s, g in zip(out["row_skel"], out["rgroups"])) and \
            all(s.size == g.size for s, g in zip(out["col_skel"], out["cgroups"]))
        incompressible.append(full)
        rnext, row_next = _next_frame(out["rgroups"], out["row_skel"], out["rpresent"], tree, l, rid)
        cnext, col_next = _next_frame(out["cgroups"], out["col_skel"], out["cpresent"], tree, l, cid)

        lr, lc, lv = [], [], []
        for bi, g in enumerate(out["rgroups"]):
            U = out["row_U"][bi]
            ii, jj = np.nonzero(U)
            lr.append(g[ii])
            lc.append(row_next[bi][jj])
            lv.append(U[ii, jj])
        Lm = _coo(lr, lc, lv, (rid.size, rnext.size), access.dtype)
        rr, rc, rv = [], [], []
        for bi, g in enumerate(out["cgroups"]):
            V = out["col_V"][bi]
            ii, jj = np.nonzero(V)
            rr.append(col_next[bi][ii])
            rc.append(g[jj])
            rv.append(V[ii, jj])
        Rm = _coo(rr, rc, rv, (cnext.size, cid.size), access.dtype)

        D.append(out["D"])
        L.append(Lm)
        R.append(Rm)
        rsizes = [g.size for g in out["rgroups"]] + [g.size for g in out["cgroups"]]
        ranks = [s.size for s in out["row_skel"]] + [s.size for s in out["col_skel"]]
        dims.append((len(out["rpresent"]), max(rsizes), max(ranks)))
        maps.append(LevelMap(
            tree_blocks_rows=out["rpresent"], tree_blocks_cols=out["cpresent"],
            row_blocks=tuple(out["rgroups"]), col_blocks=tuple(out["cgroups"]),
            row_skel=tuple(np.asarray(s) for s in out["row_skel"]),
            col_skel=tuple(np.asarray(s) for s in out["col_skel"]),
            row_next=row_next, col_next=col_next))
        rid, cid = rnext, cnext
        row_ids.append(rid)
        col_ids.append(cid)
        l += 1

    # trailing levels that compressed nothing are dropped; D_{lam+1} absorbs them
    while incompressible and incompressible[-1]:
        log.info("level %d gives no compression; truncating", len(L))
        incompressible.pop()
        for lst in (D, L, R, maps, dims, row_ids, col_ids):
            lst.pop()
        rid, cid = row_ids[-1], col_ids[-1]
    lam = len(L)
    if rid.size * cid.size > _DENSE_REMAINDER_LIMIT:
        raise SizeGuardError(
            f"top-level remainder of size {rid.size}x{cid.size} is too large; the matrix is not compressible "
            "at this tolerance and leaf size")
    last = comp.entries(rid, cid, lam) if rid.size and cid.size else np.zeros((rid.size, cid.size))
    D.append(sp.csr_matrix(np.asarray(last, dtype=access.dtype)))
    D[-1].eliminate_zeros()
    if lam == 0:
        dims.append((1, n, n))
    else:
        dims.append((1, max(rid.size, cid.size), max(rid.size, cid.size)))

    factors = HBSFactors(n=n, D=tuple(D), L=tuple(L), R=tuple(R), maps=tuple(maps),
                         row_ids=tuple(row_ids), col_ids=tuple(col_ids), dims=tuple(dims),
                         f=f, tol=tol, d=tree.cloud.d, tree=tree)
    stats = factor_stats(factors, time.perf_counter() - t0, use_proxy)
    return factors, stats


def factor_stats(factors: HBSFactors, runtime: float = 0.0, proxy_used: bool = False) -> FactorStats:
    per = []
    for i, m in enumerate(factors.D):
        per.append((f"D_{i + 1}", int(m.nnz)))
    for i, m in enumerate(factors.L):
        per.append((f"L_{i + 1}", int(m.nnz)))
    for i, m in enumerate(factors.R):
        per.append((f"R_{i + 1}", int(m.nnz)))
    bound = 0.0
    for m in factors.D + factors.L + factors.R:
        if m.nnz:
            bound = max(bound, float(np.abs(m.data).max()))
    r = 0
    saturated = 0
    for mp in factors.maps:
        for s in mp.row_skel + mp.col_skel:
            r = max(r, s.size)
        for s, g in zip(mp.row_skel + mp.col_skel, mp.row_blocks + mp.col_blocks):
            saturated += int(s.size == g.size > 0)
    return FactorStats(nnz_total=sum(v for _, v in per), nnz_per_factor=tuple(per), max_rank=r,
                       runtime_seconds=runtime, entry_bound=bound, proxy_used=proxy_used,
                       saturated_blocks=saturated)


def reconstruct(factors: HBSFactors) -> np.ndarray:
    """Dense ``D_1 + L_1(D_2 + ...)R_1``; refuses above ``RECONSTRUCT_LIMIT`` rows."""
    if factors.n > RECONSTRUCT_LIMIT:
        raise SizeGuardError(f"reconstruct is limited to N <= {RECONSTRUCT_LIMIT}")
    S = factors.D[-1].toarray()
    for l in range(factors.depth - 1, -1, -1):
        S = factors.D[l].toarray() + factors.L[l] @ (factors.R[l].T @ S.T).T
    return np.asarray(S)


def apply(factors: HBSFactors, v) -> np.ndarray:
    """Matrix-vector product through the telescoping form."""
    v = np.asarray(v)
    if v.shape[0] != factors.n:
        raise InvalidInputError(f"vector length {v.shape[0]} does not match N = {factors.n}")
    zs = [v]
    for Rm in factors.R:
        zs.append(Rm @ zs[-1])
    y = factors.D[-1] @ zs[-1]
    for l in range(factors.depth - 1, -1, -1):
        y = factors.D[l] @ zs[l] + factors.L[l] @ y
    return y


def predict_counts(d: int, n: int, m_leaf: int, r: float, n1: float, lam: int,
                   proxy_m: float | None = None):
    """Closed-form nonzero count ``s`` and construction cost ``T`` of the compression.

    ``m_leaf`` is accepted for signature symmetry; the formulas use ``n1``
    directly. ``T`` uses ``log2 r`` and the proxy size ``proxy_m`` (default
    the package proxy count for dimension ``d``).
    """
    if min(d, n, m_leaf, r, n1) <= 0 or lam < 0:
        raise InvalidInputError("all parameters must be positive")
    g = 2 ** d
    grow = 2 ** (d * lam) - 1
    s = 3 ** d * n1 * n + g * ((2 ** (d + 1) * r * r - 2 * r * r + 4 * r) * grow
                               + 4 ** d * (6 ** d - 3 ** d) * r * r * grow) / (g - 1)
    m = DEFAULT_PROXY_COUNT[d] if proxy_m is None else proxy_m
    logr = np.log2(r) if r > 1 else 0.0
    T = 2 ** (d + 1) * (m * r * logr + r ** 3) * (2 ** (d * (lam + 1)) - g) / (g - 1)
    s_int = int(round(s)) if float(s).is_integer() else s
    return s_int, float(T)


_MANIFEST = "manifest.txt"
_MAP_FIELDS = ("row_blocks", "col_blocks", "row_skel", "col_skel", "row_next", "col_next")


def _ints(a) -> str:
    return " ".join(str(int(v)) for v in np.asarray(a).ravel())


def save_factors(factors: HBSFactors, directory) -> Path:
    """Write ``D_l.txt``, ``L_l.txt``, ``R_l.txt`` and a plain-text manifest.

    Manifest lines are ``key level [block] values...``; index lists are
    0-based positions. The spatial tree is not stored.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name, mats in (("D", factors.D), ("L", factors.L), ("R", factors.R)):
        for l, m in enumerate(mats, start=1):
            write_triplet(out / f"{name}_{l}.txt", m)
    real = not np.issubdtype(factors.dtype, np.complexfloating)
    lines = [f"lam {factors.depth}", f"n {factors.n}", f"d {factors.d}",
             f"f {factors.f!r}", f"tol {factors.tol!r}", f"real {int(real)}"]
    lines += [f"dims {l} {_ints(dm)}" for l, dm in enumerate(factors.dims, start=1)]
    lines += [f"row_ids {l} {_ints(ids)}" for l, ids in enumerate(factors.row_ids, start=1)]
    lines += [f"col_ids {l} {_ints(ids)}" for l, ids in enumerate(factors.col_ids, start=1)]
    for l, m in enumerate(factors.maps, start=1):
        lines.append(f"tree_rows {l} {_ints(m.tree_blocks_rows)}")
        lines.append(f"tree_cols {l} {_ints(m.tree_blocks_cols)}")
        for key in _MAP_FIELDS:
            lines += [f"{key} {l} {b} {_ints(v)}" for b, v in enumerate(getattr(m, key))]
    atomic_write_text(out / _MANIFEST, "\n".join(lines) + "\n")
    return out


def load_factors(directory) -> HBSFactors:
    """Inverse of :func:`save_factors`."""
    src = Path(directory)
    path = src / _MANIFEST
    if not path.is_file():
        raise InvalidInputError(f"{src}: no {_MANIFEST}")
    scalars, lists = {}, {}
    maps: dict = {}
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key in ("lam", "n", "d", "f", "tol", "real"):
            scalars[key] = parts[1]
        elif key in _MAP_FIELDS:
            l, b = int(parts[1]), int(parts[2])
            maps.setdefault((l, key), {})[b] = np.array(parts[3:], dtype=np.int64)
        else:
            lists[(key, int(parts[1]))] = np.array(parts[2:], dtype=np.int64)
    lam = int(scalars["lam"])
    real = scalars.get("real") == "1"

    def mat(name, l):
        m = read_triplet(src / f"{name}_{l}.txt")
        return m.real.tocsr() if real else m

    D = tuple(mat("D", l) for l in range(1, lam + 2))
    L = tuple(mat("L", l) for l in range(1, lam + 1))
    R = tuple(mat("R", l) for l in range(1, lam + 1))
    level_maps = []
    for l in range(1, lam + 1):
        fields = {k: tuple(maps.get((l, k), {})[b] for b in sorted(maps.get((l, k), {})))
                  for k in _MAP_FIELDS}
        level_maps.append(LevelMap(tree_blocks_rows=lists[("tree_rows", l)],
                                   tree_blocks_cols=lists[("tree_cols", l)], **fields))
    n_ids = len([k for k in lists if k[0] == "row_ids"])
    n_dims = len([k for k in lists if k[0] == "dims"])
    return HBSFactors(
        n=int(scalars["n"]), D=D, L=L, R=R, maps=tuple(level_maps),
        row_ids=tuple(lists[("row_ids", l)] for l in range(1, n_ids + 1)),
        col_ids=tuple(lists[("col_ids", l)] for l in range(1, n_ids + 1)),
        dims=tuple(tuple(int(v) for v in lists[("dims", l)]) for l in range(1, n_dims + 1)),
        f=float(scalars["f"]), tol=float(scalars["tol"]), d=int(scalars["d"]),
    )
