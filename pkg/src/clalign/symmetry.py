"""Point symmetry groups and rotation error metrics.

Volumes with a point symmetry group ``G`` are identical after any rotation in ``G``, so an
alignment rotation is only recoverable up to an element of ``G``. When the true rotation is
known (synthetic benchmarks), :func:`resolve_symmetry_element` picks the element that
explains the estimate and :func:`rotation_errors` compares the two rotations through
their axes and angles.
"""

from __future__ import annotations

import re
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .core.objects import Rotation, RotationLike, as_matrix
from .exceptions import AxisUndefinedError, UnknownSymmetryError

GROUP_ORDERS = {"T": 12, "O": 24, "I": 60}

MIN_AXIS_ANGLE = np.deg2rad(0.1)
"""Rotations by less than this angle have no well-defined axis"""

_LABEL = re.compile(r"^\s*([CDTOI])(\d*)\s*$", re.IGNORECASE)


def _axis_rotation(axis: Iterable[float], angle: float) -> NDArray[np.float64]:
    return Rotation.from_axis_angle(list(axis), angle).m


def _generators(kind: str, n: int) -> list[NDArray[np.float64]]:
    if kind == "C":
        return [_axis_rotation((0, 0, 1), 2 * np.pi / n)]
    if kind == "D":
        return [_axis_rotation((0, 0, 1), 2 * np.pi / n), _axis_rotation((1, 0, 0), np.pi)]
    if kind == "T":
        return [_axis_rotation((0, 0, 1), np.pi), _axis_rotation((1, 1, 1), 2 * np.pi / 3)]
    if kind == "O":
        return [_axis_rotation((0, 0, 1), np.pi / 2), _axis_rotation((1, 1, 1), 2 * np.pi / 3)]

    golden = (1 + np.sqrt(5)) / 2
    return [
        _axis_rotation((1, 0, 0), np.pi),
        _axis_rotation((0, 1, 0), np.pi),
        _axis_rotation((0, 0, 1), np.pi),
        _axis_rotation((0, 1, golden), 2 * np.pi / 5),
    ]


def _close(generators: list[NDArray[np.float64]], limit: int = 120) -> list[NDArray[np.float64]]:
    # breadth-first closure under right multiplication by the generators
    elements = [np.eye(3)]
    frontier = [np.eye(3)]
    while frontier:
        grown = []
        for element in frontier:
            for generator in generators:
                candidate = element @ generator
                if all(np.linalg.norm(candidate - e) > 1e-9 for e in elements):
                    elements.append(candidate)
                    grown.append(candidate)

        if len(elements) > limit:
            raise RuntimeError("group closure did not terminate")
        frontier = grown

    return elements


@dataclass(frozen=True, eq=False)
class SymmetryGroup:
    """A finite rotation group in its standard orientation."""

    kind: str
    """One of ``C``, ``D``, ``T``, ``O`` or ``I``"""

    n: int
    """Order parameter of cyclic and dihedral groups (1 for the others)"""

    elements: list[Rotation]
    """The group elements; the identity comes first"""

    @property
    def label(self) -> str:
        return f"{self.kind}{self.n}" if self.kind in "CD" else self.kind

    @property
    def matrices(self) -> NDArray[np.float64]:
        return np.array([e.m for e in self.elements])

    def __len__(self) -> int:
        return len(self.elements)


def group_elements(kind: str, n: int = 1) -> SymmetryGroup:
    """Returns the point group ``kind`` (``C``, ``D``, ``T``, ``O`` or ``I``).

    ``C_n`` is generated by the rotation by ``2π/n`` about z and ``D_n`` adds the half turn
    about x. ``T`` and ``O`` use the axes of the cube centered at the origin and ``I`` the
    axes of the icosahedron whose 2-fold axes lie along x, y and z.

    Raises:
        UnknownSymmetryError: ``kind`` is not a supported group or ``n`` is below 1.
    """
    kind = kind.upper()
    if kind not in ("C", "D", "T", "O", "I"):
        raise UnknownSymmetryError(f"unknown symmetry group {kind!r}")
    if kind in ("C", "D") and n < 1:
        raise UnknownSymmetryError(f"{kind}{n}: order must be at least 1")
    if kind not in ("C", "D"):
        n = 1

    if kind == "C" and n == 1:
        elements = [np.eye(3)]
    else:
        elements = _close(_generators(kind, n), limit=max(2 * n, 60))

    return SymmetryGroup(kind, n, [Rotation(m) for m in elements])


def parse_symmetry(label: str) -> SymmetryGroup:
    """Returns the group named by ``label`` such as ``"C1"``, ``"D7"``, ``"T"``, ``"O"`` or
    ``"I"``.

    Raises:
        UnknownSymmetryError: the label cannot be parsed.
    """
    match = _LABEL.match(label)
    if match is None:
        raise UnknownSymmetryError(f"unknown symmetry label {label!r}")

    kind, order = match.group(1).upper(), match.group(2)
    if kind in ("C", "D"):
        if not order:
            raise UnknownSymmetryError(f"symmetry label {label!r} needs an order")
        return group_elements(kind, int(order))
    if order:
        raise UnknownSymmetryError(f"symmetry label {label!r} takes no order")
    return group_elements(kind)


def resolve_symmetry_element(O_est: RotationLike, O: RotationLike, G: SymmetryGroup) -> Rotation:
    """Returns the element ``g`` of ``G`` minimizing ``‖O_est − g·O‖_F`` (the earliest on ties)."""
    gO = G.matrices @ as_matrix(O)
    distances = np.linalg.norm(gO - as_matrix(O_est), axis=(1, 2))
    return G.elements[int(np.argmin(distances))]


def rotation_axis_angle(R: RotationLike) -> tuple[NDArray[np.float64], float]:
    """Returns the unit axis (eigenvector for eigenvalue 1) and the angle (radians) of ``R``.

    The angle is ``arccos(u·R·u)`` for a unit vector ``u`` orthogonal to the axis, so it is
    unsigned and lies in ``[0, π]``.

    Raises:
        AxisUndefinedError: the rotation angle is below 0.1°.
    """
    m = as_matrix(R)
    values, vectors = np.linalg.eig(m)
    axis = np.real(vectors[:, int(np.argmin(np.abs(values - 1.0)))])
    axis /= np.linalg.norm(axis)

    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    angle = float(np.arccos(np.clip(u @ m @ u, -1.0, 1.0)))
    if angle < MIN_AXIS_ANGLE:
        raise AxisUndefinedError(f"rotation by {np.rad2deg(angle):.3g}° has no defined axis")

    return axis, angle


def rotation_errors(O_est_prime: RotationLike, O: RotationLike) -> tuple[float, float]:
    """Returns the axis error ``e1`` and the angle error ``e2`` in degrees.

    ``e1`` is the angle between the rotation axes after orienting them so that their dot
    product is non-negative (so ``e1 ≤ 90°``); ``e2`` is the absolute difference of the
    unsigned rotation angles.

    Raises:
        AxisUndefinedError: either rotation is within 0.1° of the identity.
    """
    v_est, theta_est = rotation_axis_angle(O_est_prime)
    v, theta = rotation_axis_angle(O)
    e1 = np.degrees(np.arccos(np.clip(abs(v_est @ v), 0.0, 1.0)))
    e2 = np.degrees(abs(theta_est - theta))
    return float(e1), float(e2)
