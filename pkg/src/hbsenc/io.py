"""Plain-text formats: triplet sparse matrices, block layouts and point clouds."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError
from .geometry import PointCloud

__all__ = [
    "write_triplet",
    "read_triplet",
    "write_layout",
    "read_layout",
    "write_points",
    "read_points",
    "atomic_write_text",
]

_HEADER = "%%sparse complex"


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_triplet(path, matrix) -> None:
    """Write a sparse or dense matrix; dense input is stored fully populated."""
    if sp.issparse(matrix):
        coo = sp.coo_matrix(matrix)
        coo.sum_duplicates()
        order = np.lexsort((coo.col, coo.row))
        r, c, v = coo.row[order], coo.col[order], coo.data[order]
        shape = coo.shape
    else:
        a = np.atleast_2d(np.asarray(matrix))
        shape = a.shape
        r, c = np.indices(shape)
        r, c, v = r.ravel(), c.ravel(), a.ravel()
    v = np.asarray(v, dtype=complex)
    lines = [f"{_HEADER} {shape[0]} {shape[1]} {len(v)}"]
    lines += [f"{i + 1} {j + 1} {x.real:.17g} {x.imag:.17g}" for i, j, x in zip(r, c, v)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_triplet(path) -> sp.csr_matrix:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 5 or " ".join(head[:2]) != _HEADER:
            raise InvalidInputError(f"{path}: missing '{_HEADER}' header")
        nr, nc, nnz = (int(x) for x in head[2:])
        body = np.array(fh.read().split(), dtype=float)
    if body.size != 4 * nnz:
        raise InvalidInputError(f"{path}: expected {nnz} entries of the form 'row col re im'")
    data = body.reshape(nnz, 4)
    r = data[:, 0].astype(np.int64) - 1
    c = data[:, 1].astype(np.int64) - 1
    if nnz and (r.min() < 0 or c.min() < 0 or r.max() >= nr or c.max() >= nc):
        raise InvalidInputError(f"{path}: index out of range")
    return sp.csr_matrix((data[:, 2] + 1j * data[:, 3], (r, c)), shape=(nr, nc))


def write_layout(path, layout) -> None:
    atomic_write_text(path, "".join(f"{name} {off} {size}\n" for name, off, size in layout))


def read_layout(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                name, off, size = line.split()
                out.append((name, int(off), int(size)))
    return tuple(out)


def write_points(path, cloud: PointCloud) -> None:
    pts = cloud.points
    lines = [f"{cloud.d} {cloud.n}"] + [" ".join(f"{v:.17g}" for v in row) for row in pts]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_points(path) -> PointCloud:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2:
            raise InvalidInputError(f"{path}: first line must be 'd N'")
        d, n = int(head[0]), int(head[1])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != n or any(len(r) != d for r in rows):
        raise InvalidInputError(f"{path}: expected {n} points in {d} dimensions")
    pts = np.array(rows, dtype=float).reshape(n, d)
    return PointCloud(pts)
