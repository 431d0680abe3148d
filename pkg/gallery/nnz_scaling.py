"""Nonzeros of the extended sparse system versus N, with and without proxy surfaces.

Run with ``python3 gallery/nnz_scaling.py``; prints a small table and the
log-log slope of nnz against N.
"""

from __future__ import annotations

import time

import numpy as np

from hbsenc.hbs import hbs_compress
from hbsenc.kernels import KernelMatrix, KernelSpec, starfish_equispaced
from hbsenc.sparsify import assemble_extended


def main(sizes=(512, 1024, 2048, 4096)) -> None:
    spec = KernelSpec("log2d")
    for proxy in (True, False):
        nnz = []
        print(f"proxy={'on' if proxy else 'off'}")
        for n in sizes:
            cloud, w = starfish_equispaced(n)
            t0 = time.perf_counter()
            factors, stats = hbs_compress(KernelMatrix(spec, cloud, w), leaf_size=32, tol=1e-10, use_proxy=proxy)
            secs = time.perf_counter() - t0
            nnz.append(assemble_extended(factors).nnz)
            print(f"  N={n:5d}  {secs:6.2f} s  max rank {stats.max_rank:3d}  nnz {nnz[-1]}")
        slope = np.polyfit(np.log(sizes), np.log(nnz), 1)[0]
        print(f"  log-log slope {slope:.3f}")


if __name__ == "__main__":
    main()
