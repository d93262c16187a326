"""Common-line geometry and the search that orients one projection against a volume.

Two central slices of a volume spectrum intersect along a line through the origin, so the
2D spectra of two projections agree along one ray each. A candidate orientation ``Q`` of a
projection ``P`` predicts where that ray lies in ``P`` and in each reference projection;
the better the candidate, the more the predicted rays correlate.

A translation ``(Δx, Δy)`` of ``P`` multiplies its ray at angle ``α`` by
``exp(−i·ξ·(Δx·cos α + Δy·sin α))``. :func:`cost_rho` undoes one 1D shift shared by every
line; :func:`cost_planar` undoes a 2D translation, which moves each line by its own amount.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation as SciRotation

from .core.objects import Rotation, RotationLike, Volume, as_matrix
from .exceptions import CommonLineError, ShapeMismatchError
from .fourier import DEFAULT_N_THETA, PolarSpectrum, polar_ft
from .projector import CandidateSet, ProjectionImage, Projector, random_rotation_matrices

logger = logging.getLogger(__name__)

ShiftModel = Literal["planar", "shared"]

PARALLEL_TOLERANCE = 1e-8
"""Viewing directions whose cross product is shorter than this share no common line"""

DEFAULT_MAX_SHIFT_FRACTION = 0.15

DEFAULT_STARTS = 3
"""Number of best candidates the local search starts from"""

SNAP_TOLERANCE = np.deg2rad(1.0)
"""Local search results this close to a candidate are reported as that candidate"""

POLISH_ANGLE_STEP = np.deg2rad(2.0)
POLISH_SHIFT_STEP = 0.5


@dataclass(frozen=True)
class CommonLinePair:
    """The angles (radians, in ``[0, 2π)``) of the common line in two image spectra."""

    alpha_i: float
    alpha_j: float


@dataclass(frozen=True)
class ShiftGrid:
    """The 1D shifts ``Δξ = −d + k·Δd`` tried along each common line (pixels)."""

    d: float
    delta_d: float = 1.0

    def __post_init__(self) -> None:
        if self.d < 0 or self.delta_d <= 0:
            raise ValueError("shift range must be non-negative and the step positive")

        steps = self.d / self.delta_d
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"shift range {self.d} is not a multiple of the step {self.delta_d}")

    @classmethod
    def for_size(
        cls, n: int, max_shift_fraction: float = DEFAULT_MAX_SHIFT_FRACTION, step: float = 1.0
    ) -> ShiftGrid:
        """Returns the grid covering ``±ceil(max_shift_fraction·n)`` pixels, rounded up to a
        multiple of ``step``."""
        d = math.ceil(max_shift_fraction * n / step) * step
        return cls(float(d), float(step))

    @cached_property
    def values(self) -> NDArray[np.float64]:
        count = int(round(2 * self.d / self.delta_d)) + 1
        return -self.d + self.delta_d * np.arange(count)

    def __len__(self) -> int:
        return len(self.values)


def _angle(c: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.mod(np.arctan2(c[..., 1], c[..., 0]), 2 * np.pi)


def _unit(angles: ArrayLike) -> NDArray[np.float64]:
    angles = np.asarray(angles, dtype=np.float64)
    return np.stack([np.cos(angles), np.sin(angles)], axis=-1)


def commonline_angles(Ri: RotationLike, Rj: RotationLike) -> CommonLinePair:
    """Returns the angles of the common line of projections taken at ``Ri`` and ``Rj``.

    The line direction is ``q = Ri⁽³⁾ × Rj⁽³⁾`` (normalized); it appears in image ``i`` at
    ``Riᵀq`` and in image ``j`` at ``Rjᵀq``.

    Raises:
        CommonLineError: the viewing directions are parallel.
    """
    mi, mj = as_matrix(Ri), as_matrix(Rj)
    q = np.cross(mi[:, 2], mj[:, 2])
    norm = np.linalg.norm(q)
    if norm <= PARALLEL_TOLERANCE:
        raise CommonLineError("viewing directions are parallel; the common line is undefined")

    q /= norm
    return CommonLinePair(float(_angle(mi.T @ q)), float(_angle(mj.T @ q)))


def ray_index(angle: float | NDArray[np.float64], n_theta: int) -> NDArray[np.int64]:
    """Returns the index of the polar ray nearest to ``angle``."""
    return np.mod(np.rint(np.asarray(angle) * n_theta / (2 * np.pi)), n_theta).astype(np.int64)


def _interpolate_rays(rays: NDArray[np.complex128], angles: ArrayLike) -> NDArray[np.complex128]:
    # linear interpolation between the two rays around each angle
    position = np.asarray(angles) * rays.shape[0] / (2 * np.pi)
    lower = np.floor(position)
    weight = (position - lower)[..., None]
    k = np.mod(lower.astype(np.int64), rays.shape[0])
    return (1.0 - weight) * rays[k] + weight * rays[(k + 1) % rays.shape[0]]


def _normalize_rays(rays: NDArray[np.complex128]) -> NDArray[np.complex128]:
    centered = rays - rays.mean(axis=-1, keepdims=True)
    norm = np.linalg.norm(centered, axis=-1, keepdims=True)
    return np.divide(centered, norm, out=np.zeros_like(centered), where=norm > 0)


def _real_inner(f: NDArray[np.complex128], g: NDArray[np.complex128]) -> NDArray[np.float64]:
    return np.sum(f.real * g.real + f.imag * g.imag, axis=-1)


def _modulate(pP: PolarSpectrum, shifts: NDArray[np.float64]) -> NDArray[np.complex128]:
    # (n_shift, n_theta, n_r): rays of P multiplied by exp(−i·ξ·Δξ)
    phase = np.exp(-1j * shifts[:, None] * pP.radii[None, :])
    return pP.rays[None, :, :] * phase[:, None, :]


def _planar_phase(
    radii: NDArray[np.float64], angles: ArrayLike, shift: ArrayLike
) -> NDArray[np.complex128]:
    # exp(i·ξ·(shift·u(α))) undoes a translation of the image by ``shift``
    along = _unit(angles) @ np.asarray(shift, dtype=np.float64)
    return np.exp(1j * np.asarray(along)[..., None] * radii)


def _score_lines(
    pP: PolarSpectrum,
    pA: Sequence[PolarSpectrum],
    Q: RotationLike,
    refRots: Sequence[RotationLike],
    phase: Callable[[float], NDArray[np.complex128]],
) -> float:
    if len(pA) != len(refRots):
        raise ValueError(f"{len(pA)} reference spectra for {len(refRots)} rotations")

    n_theta = pP.n_theta
    terms = []
    for spectrum, rotation in zip(pA, refRots):
        if spectrum.rays.shape != pP.rays.shape:
            raise ShapeMismatchError("reference and image polar spectra differ in shape")
        try:
            pair = commonline_angles(Q, rotation)
        except CommonLineError:
            continue

        k = int(ray_index(pair.alpha_i, n_theta))
        f = _normalize_rays(pP.rays[k] * phase(float(pP.angles[k])))
        g = _normalize_rays(spectrum.rays[ray_index(pair.alpha_j, n_theta)])
        terms.append(np.vdot(f, g).real)

    return float(np.mean(terms)) if terms else -math.inf


def cost_rho(
    pP: PolarSpectrum,
    pA: Sequence[PolarSpectrum],
    Q: RotationLike,
    refRots: Sequence[RotationLike],
    dxi: float,
) -> float:
    """Scores the candidate orientation ``Q`` of the image with polar spectrum ``pP``.

    For each reference ``i`` the common line of ``Q`` and ``refRots[i]`` selects a ray of
    ``pP`` (modulated by ``exp(−i·ξ·dxi)``) and a ray of ``pA[i]``. Both rays are
    mean-subtracted and normalized; the score is the mean real inner product. References
    whose viewing direction is parallel to ``Q``'s are skipped.

    Returns ``-inf`` when every reference is skipped.
    """
    phase = np.exp(-1j * pP.radii * dxi)
    return _score_lines(pP, pA, Q, refRots, lambda angle: phase)


def cost_planar(
    pP: PolarSpectrum,
    pA: Sequence[PolarSpectrum],
    Q: RotationLike,
    refRots: Sequence[RotationLike],
    shift: ArrayLike,
) -> float:
    """Like :func:`cost_rho`, but for an image translated by the 2D ``shift``.

    The ray of ``pP`` at angle ``α`` is modulated by ``exp(i·ξ·(Δx·cos α + Δy·sin α))``,
    so a translation of ``(Δx, Δy)`` pixels scores like the untranslated image.
    """
    shift = np.asarray(shift, dtype=np.float64)
    if shift.shape != (2,):
        raise ValueError(f"expected a 2D shift, got shape {shift.shape}")

    return _score_lines(
        pP, pA, Q, refRots, lambda angle: _planar_phase(pP.radii, angle, shift)
    )


@dataclass(frozen=True)
class MatchResult:
    """The orientation found for one projection."""

    rotation: Rotation
    index: int
    """Position in the candidate set of the best candidate (the start of the local search)"""

    shift: tuple[float, ...]
    """``(Δξ,)`` under the shared model, the image translation ``(Δx, Δy)`` under the
    planar model"""

    score: float
    polished: bool = False
    """Whether :attr:`rotation` comes from the local search rather than the candidate set"""


class ProjectionMatcher:
    """Orients projections against a fixed volume by scanning a candidate set.

    On construction, ``N`` reference projections of ``v`` are drawn at random orientations
    and their polar spectra computed. The ray each candidate rotation pairs with each
    reference is also tabulated, so matching an image only requires its polar spectrum.

    Two shift models are available. ``"shared"`` searches one 1D shift for all common
    lines, exactly maximizing :func:`cost_rho` over the candidates and ``grid``.
    ``"planar"`` lets every line pick its best shift from ``grid``, fits the image
    translation that agrees best with those shifts (least squares) and scores each
    candidate with :func:`cost_planar` at that translation. Under the planar model the
    best candidates are then polished by a Nelder-Mead search over a small rotation and
    the translation, scoring with rays interpolated at the exact common-line angles.

    Arguments:
        v (Volume):
            The volume the references are projected from.

        S (CandidateSet):
            The candidate rotations.

        N (int):
            Number of reference projections.

        grid (ShiftGrid):
            The 1D shifts tried along each common line. Under the planar model,
            translations are also kept within ``grid.d`` pixels.

        seed (int | Generator):
            Seeds the reference orientations.

    Keyword Arguments:
        n_theta (int, optional):
            Number of polar rays. Defaults to 360.

        n_r (int, optional):
            Radial samples per ray. Defaults to ``ceil(n/2)``.

        shift_model (str, optional):
            ``"planar"`` (default) or ``"shared"``.

        polish (bool, optional):
            Whether to run the local search (planar model only). Defaults to True.

        starts (int, optional):
            Number of best candidates the local search starts from. Defaults to 3.
    """

    def __init__(
        self,
        v: Volume,
        S: CandidateSet,
        N: int,
        grid: ShiftGrid,
        seed: int | np.random.Generator,
        *,
        n_theta: int = DEFAULT_N_THETA,
        n_r: int | None = None,
        shift_model: ShiftModel = "planar",
        polish: bool = True,
        starts: int = DEFAULT_STARTS,
    ) -> None:
        if N < 1:
            raise ValueError(f"at least one reference projection is required, got {N}")
        if shift_model not in ("planar", "shared"):
            raise ValueError(f"unknown shift model {shift_model!r}")
        if starts < 1:
            raise ValueError(f"the local search needs at least one start, got {starts}")

        self.n = v.n
        self.candidates = S
        self.grid = grid
        self.n_theta = n_theta
        self.n_r = n_r
        self.shift_model = shift_model
        self.polish = polish and shift_model == "planar"
        self.starts = starts

        self.reference_rotations = random_rotation_matrices(N, seed)
        projector = Projector(v)
        self.reference_spectra = [
            polar_ft(projector.project(m).data, n_theta, n_r) for m in self.reference_rotations
        ]
        self._reference_unit = [_normalize_rays(s.rays) for s in self.reference_spectra]
        self._reference_rays = [_stack_real(unit) for unit in self._reference_unit]
        self._reference_stack = np.stack([s.rays for s in self.reference_spectra])
        self._tabulate_lines()
        logger.debug("prepared %d references against %d candidates", N, len(S))

    def _tabulate_lines(self) -> None:
        Q = self.candidates.matrices
        R = self.reference_rotations
        q = np.cross(Q[:, None, :, 2], R[None, :, :, 2])  # (K, N, 3)
        norm = np.linalg.norm(q, axis=-1)
        self.valid = norm > PARALLEL_TOLERANCE
        q = q / np.where(self.valid, norm, 1.0)[..., None]

        self.alpha = ray_index(_angle(np.einsum("kab,kna->knb", Q, q)), self.n_theta)
        self.beta = ray_index(_angle(np.einsum("nab,kna->knb", R, q)), self.n_theta)
        self.valid_count = self.valid.sum(axis=1)

        # unit vectors of the image rays, zero on skipped lines, and the inverse normal
        # matrices of the per-candidate least-squares translation fit
        directions = _unit(2 * np.pi * self.alpha / self.n_theta)
        self._directions = np.where(self.valid[..., None], directions, 0.0)
        normal = np.einsum("kna,knb->kab", self._directions, self._directions)
        self._normal_inverse = np.linalg.pinv(normal)

    def _polar(self, P: ProjectionImage) -> PolarSpectrum:
        if P.n != self.n:
            raise ShapeMismatchError(f"image has side {P.n}, references have side {self.n}")
        return polar_ft(P.data, self.n_theta, self.n_r)

    def _mean(self, total: NDArray[np.float64]) -> NDArray[np.float64]:
        with np.errstate(divide="ignore", invalid="ignore"):
            mean = total / self.valid_count
        return np.where(self.valid_count > 0, mean, -np.inf)

    def _line_tables(self, pP: PolarSpectrum) -> Iterator[tuple[int, NDArray[np.float64]]]:
        # for each reference, the real inner product of every shifted image ray with every
        # reference ray, read at the tabulated lines: shape (n_shift, |S|)
        shifts = self.grid.values
        f_rays = _stack_real(_normalize_rays(_modulate(pP, shifts)))
        f_rays = f_rays.reshape(len(shifts) * self.n_theta, -1)
        for i, g_rays in enumerate(self._reference_rays):
            table = (f_rays @ g_rays.T).reshape(len(shifts), self.n_theta, self.n_theta)
            yield i, table[:, self.alpha[:, i], self.beta[:, i]]

    def _shared_scores(self, pP: PolarSpectrum) -> NDArray[np.float64]:
        total = np.zeros((len(self.grid), len(self.candidates)))
        for i, picked in self._line_tables(pP):
            total += np.where(self.valid[:, i], picked, 0.0)
        return self._mean(total).T

    def _planar_scores(
        self, pP: PolarSpectrum
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        shifts = self.grid.values
        rhs = np.zeros((len(self.candidates), 2))
        for i, picked in self._line_tables(pP):
            # a translation t moves line i by −t·u_i
            best = shifts[np.argmax(picked, axis=0)]
            rhs -= best[:, None] * self._directions[:, i]

        planar = np.einsum("kab,kb->ka", self._normal_inverse, rhs)
        length = np.linalg.norm(planar, axis=1, keepdims=True)
        planar *= np.minimum(1.0, self.grid.d / np.maximum(length, 1e-12))

        total = np.zeros(len(self.candidates))
        for i, unit in enumerate(self._reference_unit):
            along = np.einsum("ka,ka->k", self._directions[:, i], planar)
            rays = pP.rays[self.alpha[:, i]] * np.exp(1j * along[:, None] * pP.radii)
            score = _real_inner(_normalize_rays(rays), unit[self.beta[:, i]])
            total += np.where(self.valid[:, i], score, 0.0)

        return self._mean(total), planar

    def planar_scores(self, P: ProjectionImage) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Returns the planar-model score of every candidate, shape ``(|S|,)``, and the
        fitted image translation of every candidate, shape ``(|S|, 2)``."""
        return self._planar_scores(self._polar(P))

    def scores(self, P: ProjectionImage) -> NDArray[np.float64]:
        """Returns the score of every ``(candidate, shift)`` pair, shape ``(|S|, len(grid))``.
        Under the planar model the second axis has length 1."""
        pP = self._polar(P)
        if self.shift_model == "shared":
            return self._shared_scores(pP)
        return self._planar_scores(pP)[0][:, None]

    def continuous_score(
        self, P: ProjectionImage | PolarSpectrum, Q: RotationLike, shift: ArrayLike
    ) -> float:
        """Returns the planar-model score of any rotation ``Q``, reading the rays at the
        exact common-line angles by linear interpolation."""
        pP = P if isinstance(P, PolarSpectrum) else self._polar(P)
        Q, R = as_matrix(Q), self.reference_rotations
        q = np.cross(Q[:, 2], R[:, :, 2])
        norm = np.linalg.norm(q, axis=1)
        valid = np.flatnonzero(norm > PARALLEL_TOLERANCE)
        if not len(valid):
            return -math.inf

        q = q[valid] / norm[valid, None]
        alpha = _angle(q @ Q)
        beta = _angle(np.einsum("nab,na->nb", R[valid], q))

        f = _interpolate_rays(pP.rays, alpha) * _planar_phase(pP.radii, alpha, shift)
        position = beta * self.n_theta / (2 * np.pi)
        lower = np.floor(position)
        weight = (position - lower)[:, None]
        k = np.mod(lower.astype(np.int64), self.n_theta)
        stack = self._reference_stack
        g = (1.0 - weight) * stack[valid, k] + weight * stack[valid, (k + 1) % self.n_theta]
        return float(np.mean(_real_inner(_normalize_rays(f), _normalize_rays(g))))

    def _local_search(
        self, pP: PolarSpectrum, start: NDArray[np.float64], shift: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], float]:
        def objective(x: NDArray[np.float64]) -> float:
            Q = start @ SciRotation.from_rotvec(x[:3]).as_matrix()
            return -self.continuous_score(pP, Q, x[3:])

        x0 = np.concatenate([np.zeros(3), shift])
        steps = np.diag([POLISH_ANGLE_STEP] * 3 + [POLISH_SHIFT_STEP] * 2)
        outcome = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "initial_simplex": np.vstack([x0, x0 + steps]),
                "xatol": 1e-4,
                "fatol": 1e-7,
                "maxiter": 1000,
            },
        )
        initial = -objective(x0)
        if -outcome.fun > initial:
            return outcome.x, float(-outcome.fun)
        return x0, initial

    def _polished(
        self, pP: PolarSpectrum, scores: NDArray[np.float64], planar: NDArray[np.float64]
    ) -> MatchResult:
        best: tuple[int, NDArray[np.float64], float] | None = None
        for index in np.argsort(-scores, kind="stable")[: self.starts]:
            x, value = self._local_search(pP, self.candidates.matrices[index], planar[index])
            if best is None or value > best[2]:
                best = (int(index), x, value)

        assert best is not None
        index, x, value = best
        m = self.candidates.matrices[index] @ SciRotation.from_rotvec(x[:3]).as_matrix()
        shift = (float(x[3]), float(x[4]))

        traces = np.einsum("ij,kij->k", m, self.candidates.matrices)
        nearest = int(np.argmax(traces))
        if np.arccos(np.clip((traces[nearest] - 1.0) / 2.0, -1.0, 1.0)) <= SNAP_TOLERANCE:
            return MatchResult(self.candidates[nearest], nearest, shift, value)

        return MatchResult(Rotation(m), index, shift, value, polished=True)

    def match(self, P: ProjectionImage) -> MatchResult:
        """Returns the best orientation (and shift) for ``P``.

        Without the local search this is the best ``(candidate, shift)`` pair; ties go to
        the earliest candidate, then the earliest shift.
        """
        pP = self._polar(P)
        if self.shift_model == "shared":
            table = self._shared_scores(pP)
            flat = int(np.argmax(table))
            index, shift_index = divmod(flat, table.shape[1])
            shift = (float(self.grid.values[shift_index]),)
            return MatchResult(self.candidates[index], index, shift, float(table.flat[flat]))

        scores, planar = self._planar_scores(pP)
        if self.polish:
            return self._polished(pP, scores, planar)

        index = int(np.argmax(scores))
        shift = (float(planar[index, 0]), float(planar[index, 1]))
        return MatchResult(self.candidates[index], index, shift, float(scores[index]))


def _stack_real(rays: NDArray[np.complex128]) -> NDArray[np.float64]:
    # Re⟨f, g⟩ = Re f·Re g + Im f·Im g
    return np.concatenate([rays.real, rays.imag], axis=-1)


def align_projection(
    P: ProjectionImage,
    v: Volume,
    S: CandidateSet,
    N: int,
    grid: ShiftGrid,
    seed: int | np.random.Generator,
    **kwargs,
) -> Rotation:
    """Returns the orientation of ``P`` against ``v`` found by :class:`ProjectionMatcher`.

    With the default planar model and local search, an image of an orientation in ``S``
    yields that candidate exactly; other orientations may yield a rotation off the grid.
    This builds a one-off matcher; reuse a matcher when orienting several images against
    the same volume.

    Raises:
        ShapeMismatchError: ``P`` and ``v`` differ in side length.
    """
    if P.n != v.n:
        raise ShapeMismatchError(f"image has side {P.n}, volume has side {v.n}")

    return ProjectionMatcher(v, S, N, grid, seed, **kwargs).match(P).rotation
