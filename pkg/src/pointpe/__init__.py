"""Analytical per-point embeddings for robust point-cloud processing."""

from .pointcloud import PointCloud, TriangleMesh, load_off, load_xyz, make_shape, normalize, sample_surface, save_xyz
from .encoders import Encoder, build_encoder
from .pooling import PooledFeature, pool
from .corruptions import CorruptionSpec, corrupt, severity_table

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "TriangleMesh",
    "load_off",
    "load_xyz",
    "save_xyz",
    "make_shape",
    "normalize",
    "sample_surface",
    "Encoder",
    "build_encoder",
    "PooledFeature",
    "pool",
    "CorruptionSpec",
    "corrupt",
    "severity_table",
]
