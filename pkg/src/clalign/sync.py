"""Recovering one rotation from many projection orientation estimates.

Projections of the second volume are taken at known rotations ``R_i`` and oriented against
the first volume, giving estimates ``R̃_i = g_i·O·R_i`` where each ``g_i`` is an unknown
symmetry element of the first volume. The matrices ``X_i = R_i·R̃_iᵀ`` satisfy
``X_iᵀ·X_j = g_i·g_jᵀ``; stacking these blocks gives a rank-3 matrix whose leading
eigenvectors recover every ``g_i`` up to a common factor, after which ``O`` follows by
averaging.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core.objects import REFLECTION_Z, Rotation, as_matrix
from .exceptions import DegenerateRotationError

logger = logging.getLogger(__name__)

J = REFLECTION_Z
"""The z-flip ``diag(1, 1, −1)``"""

EIGENGAP_TOLERANCE = 1e-6
"""Eigengaps at or below this fraction of ``N`` are reported as degenerate"""


def nearest_rotation(m: ArrayLike) -> Rotation:
    """Returns the rotation closest to ``m`` in Frobenius norm.

    This is the polar factor ``U·Vᵀ`` of the SVD ``m = U·Σ·Vᵀ``; when that has determinant
    −1 the singular vector of the smallest singular value is negated.
    """
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    if np.linalg.det(u @ vt) < 0:
        u[:, -1] = -u[:, -1]

    return Rotation(u @ vt)


def _orthogonalize(m: NDArray[np.float64]) -> NDArray[np.float64]:
    # nearest orthogonal matrix, either determinant
    u, _, vt = np.linalg.svd(m)
    return u @ vt


@dataclass(frozen=True, eq=False)
class SyncProblem:
    """Orientation estimates of the projections of one volume against the other."""

    R: Sequence[Rotation]
    """The rotations the second volume was projected at"""

    Rt: Sequence[Rotation]
    """The orientations estimated for those projections against the first volume"""

    reflected: bool = False
    """Whether to solve for a reflected pair (``φ₂(r) = φ₁(O·J·r − t)``)"""

    def __post_init__(self) -> None:
        if len(self.R) != len(self.Rt):
            raise ValueError(f"{len(self.R)} rotations but {len(self.Rt)} estimates")
        if len(self.R) < 2:
            raise ValueError("synchronization needs at least two projections")

    @property
    def N(self) -> int:
        return len(self.R)


@dataclass(frozen=True, eq=False)
class SyncResult:
    O_est: Rotation
    """The estimated rotation ``g₁·O``"""

    g_est: list[NDArray[np.float64]]
    """The relative symmetry elements ``g_i·g₁ᵀ``"""

    eigengap: float
    """``λ₃ − λ₄`` of the synchronization matrix"""

    eigenvalues: NDArray[np.float64] = field(repr=False)
    """All eigenvalues, in decreasing order"""

    warnings: tuple[str, ...] = ()

    @property
    def degenerate(self) -> bool:
        """Whether the eigengap is at most ``1e-6·N``"""
        return self.eigengap <= EIGENGAP_TOLERANCE * len(self.g_est)


def build_X(p: SyncProblem) -> list[NDArray[np.float64]]:
    """Returns ``X_i = R_i·R̃_iᵀ`` (or ``J·R_i·J·R̃_iᵀ`` for the reflected branch)."""
    out = []
    for r, rt in zip(p.R, p.Rt):
        m = as_matrix(r)
        if p.reflected:
            m = J @ m @ J
        out.append(m @ as_matrix(rt).T)

    return out


def synchronization_matrix(X: Sequence[NDArray[np.float64]]) -> NDArray[np.float64]:
    """Returns the ``3N × 3N`` matrix whose ``(i, j)`` block is ``X_iᵀ·X_j``."""
    stacked = np.concatenate(X, axis=1)  # [X_1 X_2 ... X_N]
    return stacked.T @ stacked


def relative_elements(V: ArrayLike) -> list[NDArray[np.float64]]:
    """Returns the estimates ``g_i·g₁ᵀ = V_i·V₁ᵀ`` from the leading eigenvectors ``V`` (3N × 3).

    Each 3×3 block ``V_i`` is first replaced by its nearest orthogonal matrix, so the
    result does not depend on how the eigenvectors are mixed within their span. A product
    with determinant −1 is replaced by the nearest rotation.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != 3 or V.shape[0] % 3:
        raise ValueError(f"expected a (3N, 3) array of eigenvectors, got shape {V.shape}")

    blocks = [_orthogonalize(V[i : i + 3]) for i in range(0, V.shape[0], 3)]
    out = []
    for b in blocks:
        g = b @ blocks[0].T
        out.append(g if np.linalg.det(g) > 0 else nearest_rotation(g).m.copy())
    return out


def synchronize(p: SyncProblem) -> SyncResult:
    """Estimates ``O`` (up to a symmetry element) from ``p``.

    The three leading eigenvectors ``V`` of the synchronization matrix are split into
    3×3 blocks ``V_i``; each block is projected to the nearest orthogonal matrix and
    ``g_i·g₁ᵀ`` is estimated as ``V_i·V₁ᵀ``. Each projection then gives one estimate
    ``O_i = (g_i·g₁ᵀ)ᵀ·R̃_i·R_iᵀ`` (``R̃_i·J·R_iᵀ·J`` on the reflected branch), and the
    estimates are averaged by :func:`svd_rotation_average`.

    A degenerate spectrum (eigengap at most ``1e-6·N``) does not raise; it is logged and
    recorded in :attr:`SyncResult.warnings`.
    """
    X = build_X(p)
    H = synchronization_matrix(X)
    values, vectors = np.linalg.eigh(H)
    values, vectors = values[::-1], vectors[:, ::-1]
    g_est = relative_elements(vectors[:, :3])

    estimates = []
    for g, r, rt in zip(g_est, p.R, p.Rt):
        m, mt = as_matrix(r), as_matrix(rt)
        if p.reflected:
            estimates.append(g.T @ mt @ J @ m.T @ J)
        else:
            estimates.append(g.T @ mt @ m.T)

    eigengap = float(values[2] - values[3]) if len(values) > 3 else float(values[2])
    result = SyncResult(svd_rotation_average(estimates), g_est, eigengap, values)
    if result.degenerate:
        message = f"degenerate synchronization spectrum (eigengap {eigengap:.3g}, N={p.N})"
        logger.warning(message)
        result = dataclasses.replace(result, warnings=(message,))

    return result


def svd_rotation_average(Os: Sequence[ArrayLike]) -> Rotation:
    """Returns the rotation minimizing ``Σ‖O_i − O‖²_F``: the nearest rotation to the mean.

    Raises:
        ValueError: ``Os`` is empty.
        DegenerateRotationError: the mean has rank below 3.
    """
    if len(Os) == 0:
        raise ValueError("cannot average an empty list of rotations")

    mean = np.mean([as_matrix(o) for o in Os], axis=0)
    singular = np.linalg.svd(mean, compute_uv=False)
    if singular[-1] <= 1e-12 * max(singular[0], 1.0):
        raise DegenerateRotationError(
            f"mean rotation has rank below 3 (singular values {singular})"
        )

    return nearest_rotation(mean)
