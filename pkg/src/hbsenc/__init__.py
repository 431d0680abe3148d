"""HBS compression of kernel matrices, extended sparsification and block-encoding simulation."""

from .errors import (
    HBSError,
    InvalidInputError,
    SingularEvaluationError,
    SingularMatrixError,
    SizeGuardError,
)
from .geometry import PointCloud, SpatialTree, build_tree, make_proxy, mark_near_far
from .kernels import KernelMatrix, KernelSpec, assemble_nystrom
from .lowrank import interp_decompose, strong_rrqr
from .hbs import HBSFactors, apply, hbs_compress, reconstruct

__all__ = [
    "HBSError",
    "InvalidInputError",
    "SingularEvaluationError",
    "SingularMatrixError",
    "SizeGuardError",
    "PointCloud",
    "SpatialTree",
    "build_tree",
    "make_proxy",
    "mark_near_far",
    "KernelMatrix",
    "KernelSpec",
    "assemble_nystrom",
    "interp_decompose",
    "strong_rrqr",
    "HBSFactors",
    "apply",
    "hbs_compress",
    "reconstruct",
]

__version__ = "0.1.0"
