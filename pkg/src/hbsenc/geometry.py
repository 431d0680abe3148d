"""Point clouds, level-uniform spatial trees, near/far marking and proxy surfaces.

The tree is built by uniform midpoint bisection of a cubic root box: every
box at a given level has the same side length, so two boxes touch exactly
when their integer grid coordinates differ by at most one along every axis.
Level 1 is the finest partition; the last level is the root.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "PointCloud",
    "Block",
    "TreeLevel",
    "SpatialTree",
    "NearFarLists",
    "ProxySurface",
    "build_tree",
    "mark_near_far",
    "make_proxy",
    "boxes_touch",
    "expected_depth",
    "DEFAULT_PROXY_COUNT",
    "DEFAULT_RADIUS_FACTOR",
]

DEFAULT_RADIUS_FACTOR = 1.5
DEFAULT_PROXY_COUNT = {1: 64, 2: 64, 3: 288}

_MAX_LEVELS = 40


@dataclass(frozen=True)
class PointCloud:
    """``N`` points in ``d`` dimensions, stored as an ``(N, d)`` array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidInputError("point cloud must hold at least one point")
        if pts.shape[1] not in (1, 2, 3):
            raise InvalidInputError(f"spatial dimension must be 1, 2 or 3, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class Block:
    """One box of the tree with the point indices it owns."""

    indices: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    grid: tuple
    parent: int = -1
    children: tuple = ()

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def circumradius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.hi - self.lo))


@dataclass(frozen=True)
class TreeLevel:
    blocks: tuple
    # block number of every point at this level, -1 never occurs
    owner: np.ndarray
    side: float

    def __len__(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class SpatialTree:
    """Level-uniform ``2^d``-tree.

    ``levels[0]`` is level 1 (finest), ``levels[-1]`` is the root. ``depth``
    counts all levels including the root.
    """

    cloud: PointCloud
    levels: tuple
    leaf_size: int
    origin: np.ndarray
    root_side: float

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level(self, l: int) -> TreeLevel:
        """Level ``l`` with ``l = 1`` the finest."""
        return self.levels[l - 1]


@dataclass(frozen=True)
class NearFarLists:
    """Near pairs per level; every other pair of blocks at that level is far."""

    near: tuple
    counts: tuple = field(default=())

    def is_near(self, l: int, p: int, q: int) -> bool:
        return q in self.near[l - 1][p]

    def near_of(self, l: int, p: int) -> np.ndarray:
        return self.near[l - 1][p]

    def far_pairs(self, l: int) -> int:
        nb = len(self.near[l - 1])
        return nb * nb - sum(len(v) for v in self.near[l - 1])


@dataclass(frozen=True)
class ProxySurface:
    points: np.ndarray
    center: np.ndarray
    radius: float

    @property
    def m(self) -> int:
        return self.points.shape[0]


def expected_depth(n: int, leaf_size: int, d: int) -> int:
    """Level count ``floor(log2(N/M)/d) + 1`` of a quasi-uniform cloud."""
    if n <= leaf_size:
        return 1
    return int(np.floor(np.log2(n / leaf_size) / d + 1e-12)) + 1


def _cells(points, origin, side, nlev):
    scale = (1 << nlev) / side
    cell = np.floor((points - origin) * scale).astype(np.int64)
    return np.clip(cell, 0, (1 << nlev) - 1)


def build_tree(cloud: PointCloud, leaf_size: int = 64) -> SpatialTree:
    """Bisect a cubic root box uniformly until no box holds more than ``leaf_size`` points.

    Empty boxes are pruned. All leaves sit on level 1, so every level
    partitions the full index set.
    """
    if leaf_size < 1:
        raise InvalidInputError("leaf_size must be >= 1")
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(np.asarray(cloud))
    pts = cloud.points
    n, d = pts.shape
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    side = float(np.max(hi - lo))
    if side == 0.0:
        side = 1.0
    # pad so that points on the upper face fall strictly inside
    side *= 1.0 + 1e-12
    origin = lo - 0.5 * (side - (hi - lo))

    splits = 0
    while splits < _MAX_LEVELS:
        cells = _cells(pts, origin, side, splits)
        _, counts = np.unique(cells, axis=0, return_counts=True)
        if counts.max() <= leaf_size:
            break
        splits += 1

    # coarse cells by shifting the finest ones keeps parents consistent with children
    fine = _cells(pts, origin, side, splits)
    levels = []
    for s in range(splits, -1, -1):
        cells = fine >> (splits - s)
        keys, owner = np.unique(cells, axis=0, return_inverse=True)
        owner = owner.ravel()
        h = side / (1 << s)
        order = np.argsort(owner, kind="stable")
        bounds = np.searchsorted(owner[order], np.arange(len(keys) + 1))
        blocks = []
        for b, key in enumerate(keys):
            idx = order[bounds[b]:bounds[b + 1]]
            blo = origin + key * h
            blocks.append(dict(indices=idx, lo=blo, hi=blo + h, grid=tuple(int(v) for v in key)))
        levels.append((blocks, owner, h))

    # levels currently run finest -> root; attach parent/child links
    frozen = []
    parents = [None] * len(levels)
    for li in range(len(levels) - 1):
        blocks, owner, _ = levels[li]
        _, powner, _ = levels[li + 1]
        parents[li] = [int(powner[b["indices"][0]]) for b in blocks]
    for li, (blocks, owner, h) in enumerate(levels):
        kids = [[] for _ in blocks]
        if li > 0:
            for c, p in enumerate(parents[li - 1]):
                kids[p].append(c)
        out = []
        for b, blk in enumerate(blocks):
            out.append(Block(
                indices=blk["indices"],
                lo=blk["lo"],
                hi=blk["hi"],
                grid=blk["grid"],
                parent=parents[li][b] if parents[li] is not None else -1,
                children=tuple(kids[b]),
            ))
        owner = owner.copy()
        owner.flags.writeable = False
        frozen.append(TreeLevel(blocks=tuple(out), owner=owner, side=h))
    return SpatialTree(cloud=cloud, levels=tuple(frozen), leaf_size=leaf_size,
                       origin=origin, root_side=side)


def boxes_touch(lo1, hi1, lo2, hi2, rtol: float = 1e-9) -> bool:
    """Closed boxes intersect (touching faces, edges or corners count)."""
    scale = max(float(np.max(np.abs(np.concatenate([lo1, hi1, lo2, hi2])))), 1.0)
    eps = rtol * scale
    return bool(np.all(lo1 <= hi2 + eps) and np.all(lo2 <= hi1 + eps))


def mark_near_far(tree: SpatialTree) -> NearFarLists:
    """Mark block pairs whose boxes touch as near, per level."""
    near = []
    for lvl in tree.levels:
        grid = np.array([b.grid for b in lvl.blocks], dtype=np.int64)
        lookup = {g: i for i, g in enumerate(map(tuple, grid))}
        d = grid.shape[1]
        offsets = np.array(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij")).reshape(d, -1).T
        per_block = []
        for g in grid:
            nb = []
            for off in offsets:
                j = lookup.get(tuple(g + off))
                if j is not None:
                    nb.append(j)
            per_block.append(np.array(sorted(nb), dtype=np.int64))
        near.append(tuple(per_block))
    counts = tuple(max(len(v) for v in lv) for lv in near)
    return NearFarLists(near=tuple(near), counts=counts)


def _sphere_points(m: int) -> np.ndarray:
    # Fibonacci lattice: quasi-uniform and deterministic
    k = np.arange(m) + 0.5
    z = 1.0 - 2.0 * k / m
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (1.0 + np.sqrt(5.0)) * k
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def make_proxy(lo, hi, m: int | None = None,
               radius_factor: float = DEFAULT_RADIUS_FACTOR) -> ProxySurface:
    """Proxy points on a circle (2D) or sphere (3D) around the box ``[lo, hi]``.

    The radius is ``radius_factor`` times the box circumradius. In 1D the
    surface is a circle in the complex plane around the interval and the
    points are returned as 2D coordinates ``(re, im)``.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = lo.shape[0]
    if m is None:
        m = DEFAULT_PROXY_COUNT[d]
    if m < 1:
        raise InvalidInputError("proxy count must be >= 1")
    if not radius_factor > 1.0:
        raise InvalidInputError("radius_factor must exceed 1")
    center = 0.5 * (lo + hi)
    circ = 0.5 * float(np.linalg.norm(hi - lo))
    if circ == 0.0:
        circ = 1.0
    radius = radius_factor * circ
    if d in (1, 2):
        theta = 2.0 * np.pi * np.arange(m) / m
        unit = np.column_stack([np.cos(theta), np.sin(theta)])
        c2 = np.array([center[0], 0.0]) if d == 1 else center
        pts = c2 + radius * unit
        center = c2
    else:
        pts = center + radius * _sphere_points(m)
    return ProxySurface(points=pts, center=center, radius=radius)
