"""Projection images, random orientations and the candidate rotation grid."""

from __future__ import annotations

import logging
import math
import os
import struct
from collections.abc import Iterator
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation as SciRotation

from .core.objects import Rotation, RotationLike, Volume, as_matrix
from .exceptions import CandidateCacheError
from .fourier import Spectrum3D, fft3_centered, ifft2_centered, sample_central_slice

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]
Parametrization = Literal["quaternion", "euler"]

DEFAULT_RESOLUTION = 75
"""Grid density producing 15,236 candidate rotations"""

CACHE_MAGIC: dict[str, bytes] = {"quaternion": b"CLALIGNQ", "euler": b"CLALIGNE"}


@dataclass(frozen=True, eq=False)
class ProjectionImage:
    """A 2D projection of a volume."""

    data: NDArray[np.float64]
    """The ``n × n`` image, indexed ``(x, y)``"""

    rotation: Rotation | None = None
    """The orientation the image was generated with, when known"""

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValueError(f"projection must be a square image, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("projection contains non-finite values")

        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]


class Projector:
    """Generates projections of a single volume.

    The volume spectrum and its gridded non-uniform sampler are computed once, so each
    additional projection only costs one central-slice interpolation and a 2D FFT.
    """

    def __init__(self, v: Volume) -> None:
        self.n = v.n
        self.spectrum: Spectrum3D = fft3_centered(v)

    def project(self, R: RotationLike) -> ProjectionImage:
        """Returns the line integral ``P(x, y) = Σ_z v(R·(x, y, z))``.

        The image is computed in Fourier space as the inverse transform of a central
        slice of the volume spectrum.
        """
        plane = sample_central_slice(self.spectrum, R, self.n)
        image = ifft2_centered(plane).real * math.sqrt(self.n)
        rotation = R if isinstance(R, Rotation) else Rotation(as_matrix(R))
        return ProjectionImage(image, rotation)


def project(v: Volume, R: RotationLike) -> ProjectionImage:
    """Projects ``v`` along the third column of ``R``. See :meth:`Projector.project`."""
    return Projector(v).project(R)


def random_rotation_matrices(count: int, seed: int | np.random.Generator) -> NDArray[np.float64]:
    """Draws ``count`` Haar-distributed rotation matrices as an array of shape
    ``(count, 3, 3)``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    # normalized Gaussian quaternions
    return SciRotation.random(count, rng).as_matrix().reshape(count, 3, 3)


def random_rotations(N: int, seed: int | np.random.Generator) -> list[Rotation]:
    """Returns ``N`` independent uniformly distributed rotations, reproducible from ``seed``."""
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")

    return [Rotation(m) for m in random_rotation_matrices(N, seed)]


def euler_zyx(psi: float, theta: float, phi: float) -> Rotation:
    """Returns ``R_z(psi)·R_y(theta)·R_x(phi)``."""
    return Rotation(SciRotation.from_euler("ZYX", [psi, theta, phi]).as_matrix())


def zyx_angles(R: RotationLike) -> NDArray[np.float64]:
    """Inverse of :func:`euler_zyx`: returns ``(psi, theta, phi)``."""
    return SciRotation.from_matrix(as_matrix(R)).as_euler("ZYX")


def _hypersphere_nodes(L: int) -> Iterator[tuple[float, float, NDArray[np.float64], int]]:
    # (tau, theta) rows of the half 3-sphere; each row is a ring of phi samples starting at 0
    tau_step = (np.pi / 2) / (L / 4)
    for tau in np.arange(tau_step / 2, np.pi / 2 - tau_step / 4, tau_step):
        theta_step = np.pi / (L / 2 * np.sin(tau))
        for theta in np.arange(theta_step / 2, np.pi - theta_step / 2, theta_step):
            phi_step = 2 * np.pi / (L * np.sin(tau) * np.sin(theta))
            phi = np.arange(0, 2 * np.pi - phi_step, phi_step)
            if len(phi):
                yield tau, theta, phi, len(phi)


def _euler_nodes(L: int) -> Iterator[tuple[float, float, NDArray[np.float64], int]]:
    for tau in np.linspace(0.0, np.pi / 2, L // 4):
        n_theta = int(np.floor(L / 2 * np.sin(tau)))
        for theta in np.linspace(0.0, np.pi, n_theta):
            count = int(np.floor(L / 2 * np.sin(tau) * np.sin(theta)))
            if count > 0:
                yield tau, theta, 2 * np.pi * np.arange(count) / count, count


def candidate_count(L: int, parametrization: Parametrization = "quaternion") -> int:
    """Returns the size of :func:`candidate_set` for ``L`` without building it."""
    nodes = _hypersphere_nodes(L) if parametrization == "quaternion" else _euler_nodes(L)
    return sum(count for *_, count in nodes)


def find_resolution(target: int, *, search: range = range(8, 400)) -> int:
    """Returns the first ``L`` in ``search`` whose candidate set has ``target`` rotations.

    Raises:
        ValueError: no value in ``search`` matches.
    """
    for L in search:
        if candidate_count(L) == target:
            return L

    raise ValueError(f"no grid density in {search} yields {target} rotations")


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """A quasi-uniform sample of rotations searched when orienting a projection."""

    matrices: NDArray[np.float64]
    """The rotations as an array of shape ``(|S|, 3, 3)``"""

    L: int
    """The grid density the set was built with"""

    parametrization: Parametrization = "quaternion"

    def __post_init__(self) -> None:
        matrices = np.array(self.matrices, dtype=np.float64)
        if matrices.ndim != 3 or matrices.shape[1:] != (3, 3) or matrices.shape[0] == 0:
            raise ValueError(f"expected a non-empty (K, 3, 3) array, got {matrices.shape}")

        matrices.setflags(write=False)
        object.__setattr__(self, "matrices", matrices)

    def __len__(self) -> int:
        return self.matrices.shape[0]

    def __getitem__(self, index: int) -> Rotation:
        return Rotation(self.matrices[index])

    @property
    def rotations(self) -> list[Rotation]:
        return [Rotation(m) for m in self.matrices]

    def save(self, path: PathLike) -> None:
        """Writes the set as a 16-byte header (8-byte magic, little-endian int64 ``L``)
        followed by ``9·|S|`` little-endian float64 values."""
        with open(path, "wb") as fp:
            fp.write(CACHE_MAGIC[self.parametrization] + struct.pack("<q", self.L))
            fp.write(self.matrices.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: PathLike) -> CandidateSet:
        """Reads a set written by :meth:`save`.

        Raises:
            CandidateCacheError: the file is truncated or not a candidate set cache.
        """
        with open(path, "rb") as fp:
            contents = fp.read()

        if len(contents) < 16:
            raise CandidateCacheError(f"{path}: truncated header")

        magic, (L,) = contents[:8], struct.unpack("<q", contents[8:16])
        kinds = {value: key for key, value in CACHE_MAGIC.items()}
        if magic not in kinds:
            raise CandidateCacheError(f"{path}: unknown magic {magic!r}")

        body = contents[16:]
        if not body or len(body) % (9 * 8):
            raise CandidateCacheError(f"{path}: payload of {len(body)} bytes is not 9·|S| doubles")

        matrices = np.frombuffer(body, dtype="<f8").reshape(-1, 3, 3)
        return cls(matrices.astype(np.float64), int(L), kinds[magic])  # type: ignore[arg-type]


def candidate_set(
    L: int = DEFAULT_RESOLUTION,
    parametrization: Parametrization = "quaternion",
    *,
    cache: PathLike | None = None,
) -> CandidateSet:
    """Builds the quasi-uniform candidate rotation set.

    The default samples the half 3-sphere of unit quaternions in hyperspherical
    coordinates ``(tau, theta, phi)``: ``tau`` and ``theta`` at mid-points of steps of
    ``2π/L`` and ``2π/(L·sin(tau))``, ``phi`` from 0 in steps of ``2π/(L·sinτ·sinθ)``
    stopping one step short of a full turn. A node maps to the quaternion
    ``(w, x, y, z) = (sinτ·sinθ·sinφ, sinτ·sinθ·cosφ, sinτ·cosθ, cosτ)``.

    With ``parametrization="euler"`` the nodes are composed directly as
    ``R_z(tau)·R_y(theta)·R_x(phi)`` with ``⌊L/4⌋``, ``⌊(L/2)sinτ⌋`` and
    ``⌊(L/2)sinτ·sinθ⌋`` samples (``tau`` and ``theta`` including both endpoints).

    Arguments:
        L (int, optional):
            Grid density (samples per full turn). Defaults to :data:`DEFAULT_RESOLUTION`.

    Keyword Arguments:
        cache (str | PathLike, optional):
            A cache file. It is read when it holds a set for the same ``L`` and
            parametrization, and (re)written otherwise.
    """
    if L < 8:
        raise ValueError(f"grid density must be at least 8, got {L}")

    if cache is not None and os.path.exists(cache):
        try:
            cached = CandidateSet.load(cache)
            if cached.L == L and cached.parametrization == parametrization:
                logger.debug("loaded %d candidates from %s", len(cached), cache)
                return cached
        except CandidateCacheError as exc:
            logger.warning("ignoring candidate cache: %s", exc)

    if parametrization == "quaternion":
        quats = []
        for tau, theta, phi, _ in _hypersphere_nodes(L):
            s = np.sin(tau) * np.sin(theta)
            w, x = s * np.sin(phi), s * np.cos(phi)
            y = np.full_like(phi, np.sin(tau) * np.cos(theta))
            z = np.full_like(phi, np.cos(tau))
            quats.append(np.stack([x, y, z, w], axis=1))  # scalar-last
        matrices = SciRotation.from_quat(np.concatenate(quats)).as_matrix()
    elif parametrization == "euler":
        angles = [
            np.stack([np.full_like(phi, tau), np.full_like(phi, theta), phi], axis=1)
            for tau, theta, phi, _ in _euler_nodes(L)
        ]
        matrices = SciRotation.from_euler("ZYX", np.concatenate(angles)).as_matrix()
    else:
        raise ValueError(f"unknown parametrization {parametrization!r}")

    result = CandidateSet(matrices.reshape(-1, 3, 3), L, parametrization)
    logger.info("built %d candidate rotations (L=%d, %s)", len(result), L, parametrization)

    if cache is not None:
        result.save(cache)
    return result


def nearest_candidate_distances(S: CandidateSet, rotations: ArrayLike) -> NDArray[np.float64]:
    """Returns, for each rotation in ``rotations`` (shape ``(K, 3, 3)``), the geodesic
    distance in radians to the closest element of ``S``."""
    rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    traces = np.empty(rotations.shape[0])
    for start in range(0, rotations.shape[0], 256):
        # trace(Rᵀ·Q) for every pair in the batch
        batch = rotations[start : start + 256]
        traces[start : start + 256] = np.einsum("kij,sij->ks", batch, S.matrices).max(axis=1)
    return np.arccos(np.clip((traces - 1.0) / 2.0, -1.0, 1.0))
