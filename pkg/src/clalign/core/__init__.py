from __future__ import annotations

from .mrc import read_volume, write_volume
from .objects import (
    REFLECTION_Z,
    RigidTransform,
    Rotation,
    Volume,
    as_matrix,
    geodesic_distance,
    grid_center,
)
from .volume import apply_transform, correlation, downsample, reflect

__all__ = (
    "REFLECTION_Z",
    "RigidTransform",
    "Rotation",
    "Volume",
    "as_matrix",
    "geodesic_distance",
    "grid_center",
    "apply_transform",
    "correlation",
    "downsample",
    "reflect",
    "read_volume",
    "write_volume",
)
