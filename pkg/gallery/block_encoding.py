"""Recursive block encoding of an HBS matrix and its subnormalisation.

For the kernel ``|x - y|^-p`` on a line, the subnormalisation ``alpha_A``
grows with N when p is small and levels off once ``2^p`` exceeds the
plateau threshold. Small problems carry an explicit unitary, so the encoded
block can be checked directly. Run with ``python3 gallery/block_encoding.py``.
"""

from __future__ import annotations

from hbsenc.blockenc import (
    extraction_error,
    plateau_threshold,
    recursive_encode,
    unitarity_residual,
)
from hbsenc.hbs import hbs_compress, reconstruct
from hbsenc.kernels import KernelMatrix, KernelSpec, line_points


def main() -> None:
    for p in (1.0, 12.0):
        print(f"p={p:g}")
        for n in (128, 256, 512, 1024):
            cloud, w = line_points(n)
            factors, stats = hbs_compress(KernelMatrix(KernelSpec("powerlaw", p=p), cloud, w),
                                          leaf_size=16, tol=1e-10)
            desc = recursive_encode(factors)
            line = f"  N={n:5d}  depth {factors.depth}  alpha_A {desc.alpha:.4e}  ancillas {desc.ancillas}"
            if desc.payload is not None:
                line += (f"  extraction error {extraction_error(reconstruct(factors), desc):.1e}"
                         f"  unitarity {unitarity_residual(desc.payload.unitary):.1e}")
            print(line)
        print(f"  plateau threshold with r={stats.max_rank}: {plateau_threshold(2.0, stats.max_rank, 1):g}, "
              f"2^p = {2 ** p:g}")


if __name__ == "__main__":
    main()
