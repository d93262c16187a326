from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation as SciRotation
from typing_extensions import Self

ROTATION_TOLERANCE = 1e-10
"""Tolerance on ``‖mᵀm − I‖_F`` and ``|det(m) − 1|`` accepted for a :class:`Rotation`"""

REFLECTION_Z = np.diag([1.0, 1.0, -1.0])
"""The z-flip ``J``. It is a reflection, so it is never wrapped in a :class:`Rotation`."""
REFLECTION_Z.setflags(write=False)


def grid_center(n: int) -> int:
    """Returns the index of the center voxel of a grid of side ``n`` (``floor(n/2)``)."""
    return n // 2


@dataclass(frozen=True, eq=False)
class Volume:
    """A cubic real-valued density map indexed ``(x, y, z)``.

    The grid center is voxel ``n // 2`` on every axis. The data is copied to a read-only
    float64 array on construction so that volumes can be shared between workers.
    """

    data: NDArray[np.float64]
    """The ``n × n × n`` voxel values"""

    voxel_size: float | None = None
    """The physical voxel spacing, if known. Metadata only, never used in computations."""

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or len(set(data.shape)) != 1 or data.shape[0] < 1:
            raise ValueError(f"volume must be a non-empty cube, got shape {data.shape}")

        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")

        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        """The side length in voxels"""
        return self.data.shape[0]

    def with_data(self, data: ArrayLike) -> Volume:
        """Returns a volume with the same metadata and new ``data``."""
        return Volume(np.asarray(data), voxel_size=self.voxel_size)

    def __repr__(self) -> str:
        return f"Volume(n={self.n}, voxel_size={self.voxel_size})"


@dataclass(frozen=True, eq=False)
class Rotation:
    """A 3×3 proper rotation matrix (orthonormal, determinant +1)."""

    m: NDArray[np.float64]

    def __post_init__(self) -> None:
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"rotation must be 3×3, got shape {m.shape}")

        if np.linalg.norm(m.T @ m - np.eye(3)) > ROTATION_TOLERANCE:
            raise ValueError("matrix is not orthonormal")
        if abs(np.linalg.det(m) - 1.0) > ROTATION_TOLERANCE:
            raise ValueError("matrix has determinant -1 (a reflection, not a rotation)")

        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> Self:
        return cls(np.eye(3))

    @classmethod
    def from_axis_angle(cls, axis: ArrayLike, angle: float) -> Self:
        """Creates the right-handed rotation by ``angle`` radians about ``axis``."""
        axis = np.asarray(axis, dtype=np.float64)
        return cls(SciRotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix())

    @property
    def T(self) -> Rotation:
        """The inverse (transposed) rotation"""
        return Rotation(self.m.T)

    @property
    def angle(self) -> float:
        """The rotation angle in radians, in ``[0, π]``"""
        return float(np.arccos(np.clip((np.trace(self.m) - 1.0) / 2.0, -1.0, 1.0)))

    def __matmul__(self, other: Rotation) -> Rotation:
        return Rotation(self.m @ other.m)

    def allclose(self, other: Rotation, atol: float = 1e-8) -> bool:
        return bool(np.allclose(self.m, other.m, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"Rotation({np.array2string(self.m, precision=6, separator=', ')})"


RotationLike = Union[Rotation, NDArray[np.float64]]


def as_matrix(rotation: RotationLike) -> NDArray[np.float64]:
    """Returns the 3×3 matrix of ``rotation`` whether it is a :class:`Rotation` or an array."""
    return rotation.m if isinstance(rotation, Rotation) else np.asarray(rotation, dtype=np.float64)


def geodesic_distance(a: RotationLike, b: RotationLike) -> float:
    """Returns the angle in radians of the relative rotation ``aᵀb``."""
    rel = as_matrix(a).T @ as_matrix(b)
    return float(np.arccos(np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A rigid motion with optional handedness flip.

    Applied to a volume ``v`` it produces ``out(r) = v(O·Jᵘ·r − t)`` where ``O`` is
    :attr:`rotation`, ``t`` is :attr:`translation` and ``u`` is 1 when :attr:`reflected`.
    """

    rotation: Rotation
    translation: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    """The translation ``t`` in voxels"""

    reflected: bool = False
    """Whether the z-flip ``J`` is applied before the rotation"""

    def __post_init__(self) -> None:
        translation = np.array(self.translation, dtype=np.float64).reshape(-1)
        if translation.shape != (3,) or not np.all(np.isfinite(translation)):
            raise ValueError("translation must be a finite 3-vector")

        translation.setflags(write=False)
        object.__setattr__(self, "translation", translation)
        object.__setattr__(self, "reflected", bool(self.reflected))

    @classmethod
    def identity(cls) -> Self:
        return cls(Rotation.identity())

    @property
    def linear(self) -> NDArray[np.float64]:
        """The linear part ``O·Jᵘ`` of the map"""
        return self.rotation.m @ REFLECTION_Z if self.reflected else self.rotation.m

    def inverse(self) -> RigidTransform:
        """Returns the transform undoing this one, so that applying both returns the input
        (up to interpolation)."""
        rt = self.rotation.m.T
        if self.reflected:
            return RigidTransform(
                Rotation(REFLECTION_Z @ rt @ REFLECTION_Z),
                -(REFLECTION_Z @ rt @ self.translation),
                reflected=True,
            )

        return RigidTransform(Rotation(rt), -(rt @ self.translation))

    def __repr__(self) -> str:
        return (
            f"RigidTransform(rotation={self.rotation!r}, "
            f"translation={self.translation.tolist()}, reflected={self.reflected})"
        )
