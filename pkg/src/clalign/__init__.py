"""
clalign aligns 3D density maps over rotation, reflection and translation using common
lines between projection images.
"""

from __future__ import annotations

from .core import RigidTransform, Rotation, Volume, read_volume, write_volume
from .register import AlignmentResult, AlignParams, align_volumes

__all__ = (
    "AlignParams",
    "AlignmentResult",
    "RigidTransform",
    "Rotation",
    "Volume",
    "align_volumes",
    "read_volume",
    "write_volume",
)

__name__ = "clalign"
__version__ = "0.1.0"
__description__ = "Align cryo-EM density maps with common lines"
__license__ = "Apache 2.0"
