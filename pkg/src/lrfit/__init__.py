"""Adaptive approximation of scattered point clouds with locally refined
B-spline surfaces."""

from .driver import RunConfig, RunLedger, run
from .mesh import LRSpace, MeshSegment, make_tensor_mesh
from .surface import LRSurface, PointCloud

__all__ = [
    "LRSpace",
    "LRSurface",
    "MeshSegment",
    "PointCloud",
    "RunConfig",
    "RunLedger",
    "make_tensor_mesh",
    "run",
]

__version__ = "0.1.0"
