"""meshsplat: mesh-bound Gaussian splats with triangle-soup extraction,
a deterministic CPU renderer, and a live editing service."""

from .core import (
    FLAT_SCALE,
    OrientedTriangle,
    SplatBatch,
    SplatGaussian,
    TriMesh,
    covariance_from_rs,
    flatten,
    matrix_to_quat,
    quat_to_matrix,
)

__all__ = [
    "FLAT_SCALE",
    "OrientedTriangle",
    "SplatBatch",
    "SplatGaussian",
    "TriMesh",
    "covariance_from_rs",
    "flatten",
    "matrix_to_quat",
    "quat_to_matrix",
]

__version__ = "0.1.0"
