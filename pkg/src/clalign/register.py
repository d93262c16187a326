"""The volume alignment pipeline.

The second volume is assumed to be a rigid copy of the first,
``v2(r) = v1(O·Jᵘ·r − t)``, i.e. ``v2 = apply_transform(v1, T)``, and
:func:`align_volumes` estimates ``T``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import fft
from scipy.optimize import minimize

from .commonlines import DEFAULT_MAX_SHIFT_FRACTION, ProjectionMatcher, ShiftGrid, ShiftModel
from .common.utils import resolve_threads, spawn_generators, timed
from .core.objects import RigidTransform, Rotation, Volume, grid_center
from .core.volume import apply_transform, correlation, downsample
from .exceptions import ShapeMismatchError
from .fourier import DEFAULT_N_THETA
from .projector import (
    DEFAULT_RESOLUTION,
    CandidateSet,
    Projector,
    candidate_set,
    euler_zyx,
    random_rotations,
    zyx_angles,
)
from .sync import SyncProblem, synchronize

logger = logging.getLogger(__name__)

CROSS_POWER_FLOOR = 1e-12
"""Cross-power magnitudes at or below this fraction of the maximum are zeroed"""

ANGLE_STEP = np.deg2rad(0.25)
SHIFT_STEP = 0.25


@dataclass(frozen=True)
class AlignParams:
    """Parameters of :func:`align_volumes`."""

    n_ds: int = 64
    """Side length the volumes are downsampled to for the search"""

    N: int = 30
    """Number of projections (and of reference projections)"""

    resolution: int = DEFAULT_RESOLUTION
    """Density ``L`` of the candidate rotation grid"""

    max_shift_fraction: float = DEFAULT_MAX_SHIFT_FRACTION
    """Largest 1D shift searched along common lines, as a fraction of ``n_ds``"""

    shift_step: float = 1.0
    """Step of the shift search in pixels"""

    refine: bool = True
    """Whether to polish the estimate by local optimization at full resolution"""

    seed: int = 0
    threads: int | None = None
    """Worker threads for the projection search (see :func:`.resolve_threads`)"""

    n_theta: int = DEFAULT_N_THETA
    shift_model: ShiftModel = "planar"
    """How projection shifts are searched: one 2D translation per image (``"planar"``) or
    one 1D shift shared by all common lines (``"shared"``)"""

    polish: bool = True
    """Whether orientations found on the candidate grid are refined by a local search"""

    candidate_cache: str | None = None
    """Optional cache file for the candidate rotation grid"""

    def __post_init__(self) -> None:
        if self.n_ds < 16:
            raise ValueError(f"n_ds must be at least 16, got {self.n_ds}")
        if self.N < 2:
            raise ValueError(f"N must be at least 2, got {self.N}")
        if self.shift_model not in ("planar", "shared"):
            raise ValueError(f"unknown shift model {self.shift_model!r}")


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    transform: RigidTransform
    """The estimated transform ``T`` with ``v2 ≈ apply_transform(v1, T)``"""

    correlation: float
    """Score of the selected branch, or the refined full-resolution correlation"""

    branch_scores: tuple[float, float]
    """Downsampled correlations of the (direct, reflected) branches"""

    refined: bool
    timings: dict[str, float] = field(default_factory=dict)
    """Wall-clock seconds per stage"""

    warnings: tuple[str, ...] = ()
    degenerate: bool = False
    """Whether synchronization of the selected branch had a degenerate spectrum"""

    @property
    def reflected(self) -> bool:
        return self.transform.reflected

    def aligned(self, v2: Volume) -> Volume:
        """Returns ``v2`` mapped back onto the first volume."""
        return apply_transform(v2, self.transform.inverse())


@dataclass(frozen=True, eq=False)
class RefinementResult:
    transform: RigidTransform
    objective: float
    """``1 − correlation`` at :attr:`transform`"""

    initial_objective: float
    history: list[float]
    """Objective value after each iteration"""

    warnings: tuple[str, ...] = ()


def phase_correlation_shift(a: Volume, b: Volume) -> NDArray[np.float64]:
    """Returns the integer translation ``t`` for which ``b(r) ≈ a(r − t)`` (circularly).

    The normalized cross-power spectrum of ``a`` and ``b`` is inverse-transformed and its
    peak location negated. Frequencies with vanishing cross-power are ignored.

    Raises:
        ShapeMismatchError: the volumes have different sizes.
    """
    if a.n != b.n:
        raise ShapeMismatchError(f"cannot correlate volumes of size {a.n} and {b.n}")

    cross = fft.fftn(a.data) * np.conj(fft.fftn(b.data))
    magnitude = np.abs(cross)
    keep = magnitude > CROSS_POWER_FLOOR * magnitude.max()
    normalized = np.divide(cross, magnitude, out=np.zeros_like(cross), where=keep)

    surface = fft.ifftn(normalized).real
    peak = np.array(np.unravel_index(int(np.argmax(surface)), surface.shape))
    n, c = a.n, grid_center(a.n)
    return -(((peak + c) % n) - c).astype(np.float64)


def _estimate_branch(
    v1: Volume, v2: Volume, rotation: Rotation, reflected: bool
) -> tuple[RigidTransform, float]:
    # translation for a fixed rotation, then the correlation it achieves
    undo = RigidTransform(rotation, reflected=reflected).inverse()
    t = phase_correlation_shift(v1, apply_transform(v2, undo))
    transform = RigidTransform(rotation, t, reflected)
    return transform, correlation(v1, apply_transform(v2, transform.inverse()))


def align_volumes(
    v1: Volume,
    v2: Volume,
    p: AlignParams | None = None,
    *,
    candidates: CandidateSet | None = None,
) -> AlignmentResult:
    """Estimates the rigid transform (with possible reflection) mapping ``v1`` onto ``v2``.

    Both volumes are downsampled to ``p.n_ds``. Projections of ``v2`` at random rotations
    are oriented against reference projections of ``v1`` by common-line matching, the
    orientations are synchronized once assuming a direct pair and once assuming a
    reflected pair, and for each branch the translation is found by phase correlation.
    The branch whose transform makes ``v2`` correlate better with ``v1`` wins. Its
    translation is re-estimated at full resolution and, if ``p.refine``, the transform is
    polished with :func:`refine`.

    Arguments:
        v1 (Volume):
            The reference volume.

        v2 (Volume):
            The volume to align, of the same size.

        p (AlignParams, optional):
            Pipeline parameters. Defaults to ``AlignParams()``.

    Keyword Arguments:
        candidates (CandidateSet, optional):
            A prebuilt candidate set, used instead of building one from ``p.resolution``.

    Raises:
        ShapeMismatchError: the volumes differ in size.
        ValueError: ``p.n_ds`` exceeds the volume size.
    """
    p = p or AlignParams()
    if v1.n != v2.n:
        raise ShapeMismatchError(f"cannot align volumes of size {v1.n} and {v2.n}")
    if p.n_ds > v1.n:
        raise ValueError(f"n_ds={p.n_ds} exceeds the volume size {v1.n}")

    timings: dict[str, float] = {}
    warnings: list[str] = []
    reference_rng, view_rng = spawn_generators(p.seed, 2)

    with timed(timings, "downsample"):
        v1_ds, v2_ds = downsample(v1, p.n_ds), downsample(v2, p.n_ds)

    with timed(timings, "candidates"):
        S = candidates
        if S is None:
            S = candidate_set(p.resolution, cache=p.candidate_cache)

    with timed(timings, "references"):
        grid = ShiftGrid.for_size(p.n_ds, p.max_shift_fraction, p.shift_step)
        matcher = ProjectionMatcher(
            v1_ds,
            S,
            p.N,
            grid,
            reference_rng,
            n_theta=p.n_theta,
            shift_model=p.shift_model,
            polish=p.polish,
        )
        views = random_rotations(p.N, view_rng)
        projector = Projector(v2_ds)
        images = [projector.project(R) for R in views]

    with timed(timings, "search"):
        threads = resolve_threads(p.threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            matches = list(pool.map(matcher.match, images))
    logger.info("oriented %d projections in %.2fs", p.N, timings["search"])
    for i, match in enumerate(matches):
        logger.debug("projection %d: candidate %d, score %.4f", i, match.index, match.score)

    with timed(timings, "synchronize"):
        estimates = [match.rotation for match in matches]
        branches = []
        degenerate = []
        for reflected in (False, True):
            result = synchronize(SyncProblem(views, estimates, reflected))
            warnings.extend(result.warnings)
            degenerate.append(result.degenerate)
            branches.append(_estimate_branch(v1_ds, v2_ds, result.O_est, reflected))

    (direct, direct_score), (mirrored, mirrored_score) = branches
    selected = 0 if direct_score >= mirrored_score else 1
    best, score = branches[selected]
    logger.info(
        "branch scores: direct %.4f, reflected %.4f; selected %s",
        direct_score,
        mirrored_score,
        "reflected" if best.reflected else "direct",
    )

    if p.n_ds != v1.n:
        with timed(timings, "translate"):
            best = _estimate_branch(v1, v2, best.rotation, best.reflected)[0]
        logger.debug("full-resolution translation %s", best.translation)

    refined = False
    if p.refine:
        with timed(timings, "refine"):
            outcome = refine(v1, v2, best)
        best, score = outcome.transform, 1.0 - outcome.objective
        warnings.extend(outcome.warnings)
        refined = True

    return AlignmentResult(
        transform=best,
        correlation=float(score),
        branch_scores=(float(direct_score), float(mirrored_score)),
        refined=refined,
        timings=timings,
        warnings=tuple(warnings),
        degenerate=degenerate[selected],
    )


class _NonFiniteObjective(Exception):
    pass


def _transform_from(theta: NDArray[np.float64], reflected: bool) -> RigidTransform:
    return RigidTransform(euler_zyx(*theta[:3]), theta[3:], reflected)


def refine(
    v1: Volume,
    v2: Volume,
    init: RigidTransform,
    *,
    max_iterations: int = 200,
    gtol: float = 1e-5,
    ftol: float = 1e-6,
) -> RefinementResult:
    """Minimizes ``1 − correlation(apply_transform(v1, T), v2)`` over ``T`` with BFGS.

    The rotation is parameterized as ``R_z(psi)·R_y(theta)·R_x(phi)`` and gradients are
    central finite differences (0.25° for angles, 0.25 voxel for shifts). The reflection
    flag of ``init`` is kept. Optimization stops when an iteration lowers the objective
    by less than ``ftol``, the gradient's largest component drops below ``gtol`` or
    ``max_iterations`` is reached.

    The returned transform is never worse than ``init``. If the objective becomes
    non-finite, the best point seen so far is returned along with a warning.
    """
    if v1.n != v2.n:
        raise ShapeMismatchError(f"cannot align volumes of size {v1.n} and {v2.n}")

    reflected = init.reflected
    steps = np.array([ANGLE_STEP] * 3 + [SHIFT_STEP] * 3)
    best: dict[str, object] = {}

    def objective(theta: NDArray[np.float64]) -> float:
        try:
            value = 1.0 - correlation(apply_transform(v1, _transform_from(theta, reflected)), v2)
        except ValueError:
            value = np.inf
        if not np.isfinite(value):
            raise _NonFiniteObjective(f"objective is not finite at {theta.tolist()}")

        if value < best.get("value", np.inf):  # type: ignore[operator]
            best.update(value=value, theta=theta.copy())
        return value

    def gradient(theta: NDArray[np.float64]) -> NDArray[np.float64]:
        grad = np.empty(6)
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = steps[k]
            grad[k] = (objective(theta + delta) - objective(theta - delta)) / (2 * steps[k])
        return grad

    history: list[float] = []

    def callback(intermediate_result) -> None:
        previous = history[-1] if history else initial
        history.append(float(intermediate_result.fun))
        if previous - intermediate_result.fun < ftol:
            raise StopIteration

    start = np.concatenate([zyx_angles(init.rotation), init.translation])
    initial = objective(start)
    warnings: list[str] = []
    try:
        minimize(
            objective,
            start,
            jac=gradient,
            method="BFGS",
            callback=callback,
            options={"gtol": gtol, "maxiter": max_iterations},
        )
    except _NonFiniteObjective as exc:
        message = f"refinement stopped early: {exc}"
        logger.warning(message)
        warnings.append(message)

    value = float(best["value"])  # type: ignore[arg-type]
    if value >= initial:
        transform, value = init, initial
    else:
        transform = _transform_from(best["theta"], reflected)  # type: ignore[arg-type]

    logger.info(
        "refinement: objective %.6g -> %.6g in %d iterations", initial, value, len(history)
    )
    return RefinementResult(transform, value, initial, history, tuple(warnings))


def refine_bfgs(v1: Volume, v2: Volume, init: RigidTransform) -> RigidTransform:
    """Returns the refined transform of :func:`refine`."""
    return refine(v1, v2, init).transform
