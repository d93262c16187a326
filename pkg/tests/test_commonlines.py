# Unit tests for common-line geometry and projection matching
from __future__ import annotations

import math

import numpy as np
import pytest

from clalign.bench import phantom
from clalign.commonlines import (
    ProjectionMatcher,
    ShiftGrid,
    align_projection,
    commonline_angles,
    cost_planar,
    cost_rho,
    ray_index,
)
from clalign.core import Rotation, geodesic_distance
from clalign.exceptions import CommonLineError, ShapeMismatchError
from clalign.fourier import polar_ft
from clalign.projector import (
    CandidateSet,
    ProjectionImage,
    Projector,
    candidate_set,
    project,
    random_rotation_matrices,
)


def ray_correlation(f: np.ndarray, g: np.ndarray) -> float:
    f = f - f.mean()
    g = g - g.mean()
    return float(np.vdot(f, g).real / (np.linalg.norm(f) * np.linalg.norm(g)))


def test_commonline_examples() -> None:
    identity = Rotation.identity()

    pair = commonline_angles(identity, Rotation.from_axis_angle((1, 0, 0), np.pi / 2))
    assert pair.alpha_i == pytest.approx(0.0, abs=1e-12)
    assert pair.alpha_j == pytest.approx(0.0, abs=1e-12)

    pair = commonline_angles(identity, Rotation.from_axis_angle((0, 1, 0), np.pi / 2))
    assert pair.alpha_i == pytest.approx(np.pi / 2)
    assert pair.alpha_j == pytest.approx(np.pi / 2)

    with pytest.raises(CommonLineError):
        commonline_angles(identity, Rotation.from_axis_angle((0, 0, 1), 0.3))


def test_commonline_lies_in_both_planes() -> None:
    for Ri, Rj in random_rotation_matrices(20, seed=1).reshape(10, 2, 3, 3):
        pair = commonline_angles(Ri, Rj)
        ci = Ri @ [math.cos(pair.alpha_i), math.sin(pair.alpha_i), 0.0]
        cj = Rj @ [math.cos(pair.alpha_j), math.sin(pair.alpha_j), 0.0]
        assert np.allclose(ci, cj, atol=1e-10)


def test_ray_index() -> None:
    assert ray_index(0.0, 360) == 0
    assert ray_index(2 * np.pi - 1e-6, 360) == 0
    assert ray_index(np.deg2rad(90.2), 360) == 90


def test_common_lines_of_projections_agree() -> None:
    v = phantom(32, seed=1)
    projector = Projector(v)
    n_theta = 3600
    for Ri, Rj in random_rotation_matrices(20, seed=2).reshape(10, 2, 3, 3):
        pair = commonline_angles(Ri, Rj)
        pi = polar_ft(projector.project(Ri).data, n_theta)
        pj = polar_ft(projector.project(Rj).data, n_theta)
        f = pi.rays[ray_index(pair.alpha_i, n_theta)]
        g = pj.rays[ray_index(pair.alpha_j, n_theta)]
        assert ray_correlation(f, g) >= 0.98


def test_cost_prefers_the_true_orientation() -> None:
    v = phantom(32, seed=3)
    projector = Projector(v)
    refs = random_rotation_matrices(10, seed=4)
    pA = [polar_ft(projector.project(R).data) for R in refs]

    Q = random_rotation_matrices(1, seed=5)[0]
    pP = polar_ft(projector.project(Q).data)
    best = cost_rho(pP, pA, Q, list(refs), 0.0)
    assert best >= 0.95

    others = [cost_rho(pP, pA, R, list(refs), 0.0) for R in random_rotation_matrices(100, seed=6)]
    assert sum(score < best for score in others) >= 99


def test_cost_is_scale_invariant() -> None:
    v = phantom(32, seed=7)
    projector = Projector(v)
    refs = random_rotation_matrices(5, seed=8)
    pA = [polar_ft(projector.project(R).data) for R in refs]
    image = projector.project(random_rotation_matrices(1, seed=9)[0]).data
    Q = random_rotation_matrices(1, seed=10)[0]

    a = cost_rho(polar_ft(image), pA, Q, list(refs), 1.0)
    b = cost_rho(polar_ft(7.0 * image), pA, Q, list(refs), 1.0)
    assert a == pytest.approx(b, abs=1e-12)


def test_cost_without_common_lines() -> None:
    image = np.random.default_rng(11).normal(size=(16, 16))
    Q = Rotation.identity()
    assert cost_rho(polar_ft(image), [polar_ft(image)], Q, [Q], 0.0) == -math.inf


def test_shift_grid() -> None:
    grid = ShiftGrid.for_size(64, 0.15)
    assert grid.d == 10.0
    assert np.array_equal(grid.values, np.arange(-10.0, 11.0))

    half = ShiftGrid(2.0, 0.5)
    assert len(half) == 9
    assert half.values[0] == -2.0 and half.values[-1] == 2.0

    with pytest.raises(ValueError):
        ShiftGrid(1.0, 0.75)
    with pytest.raises(ValueError):
        ShiftGrid(1.0, 0.0)


def test_matcher_scores_match_cost() -> None:
    v = phantom(24, seed=12)
    S = CandidateSet(candidate_set(16).matrices[:40], 16)
    grid = ShiftGrid(2.0)
    matcher = ProjectionMatcher(v, S, 6, grid, seed=13, n_theta=72, shift_model="shared")

    P = project(v, random_rotation_matrices(1, seed=14)[0])
    scores = matcher.scores(P)
    assert scores.shape == (40, 5)

    pP = polar_ft(P.data, 72)
    refs = list(matcher.reference_rotations)
    for k in (0, 7, 23, 39):
        for s, dxi in enumerate(grid.values):
            expected = cost_rho(pP, matcher.reference_spectra, S.matrices[k], refs, dxi)
            assert scores[k, s] == pytest.approx(expected, abs=1e-9)

    result = matcher.match(P)
    assert result.score == pytest.approx(scores.max())
    assert result.rotation.allclose(S[result.index])
    assert result.shift[0] in grid.values
    assert not result.polished


def test_planar_scores_match_cost() -> None:
    v = phantom(24, seed=15)
    S = CandidateSet(candidate_set(16).matrices[:40], 16)
    grid = ShiftGrid(2.0)
    matcher = ProjectionMatcher(v, S, 6, grid, seed=17, n_theta=72)
    P = project(v, random_rotation_matrices(1, seed=16)[0])

    scores, planar = matcher.planar_scores(P)
    assert scores.shape == (40,) and planar.shape == (40, 2)
    assert np.all(np.linalg.norm(planar, axis=1) <= grid.d + 1e-9)
    assert np.array_equal(matcher.scores(P)[:, 0], scores)

    pP = polar_ft(P.data, 72)
    refs = list(matcher.reference_rotations)
    for k in (0, 7, 23, 39):
        expected = cost_planar(pP, matcher.reference_spectra, S.matrices[k], refs, planar[k])
        assert scores[k] == pytest.approx(expected, abs=1e-9)


def test_cost_planar_undoes_translation() -> None:
    v = phantom(32, seed=3)
    projector = Projector(v)
    refs = random_rotation_matrices(10, seed=4)
    pA = [polar_ft(projector.project(R).data) for R in refs]
    Q = random_rotation_matrices(1, seed=5)[0]
    image = projector.project(Q).data
    shifted = polar_ft(np.roll(image, (3, -2), axis=(0, 1)))

    centered = cost_planar(polar_ft(image), pA, Q, list(refs), (0.0, 0.0))
    assert centered == pytest.approx(cost_rho(polar_ft(image), pA, Q, list(refs), 0.0))
    assert cost_planar(shifted, pA, Q, list(refs), (3.0, -2.0)) == pytest.approx(
        centered, abs=0.02
    )
    assert cost_planar(shifted, pA, Q, list(refs), (0.0, 0.0)) < centered - 0.05

    with pytest.raises(ValueError):
        cost_planar(shifted, pA, Q, list(refs), (1.0, 2.0, 3.0))


def test_matcher_rejects_bad_options() -> None:
    v = phantom(16, seed=30)
    S = candidate_set(8)
    with pytest.raises(ValueError):
        ProjectionMatcher(
            v, S, 4, ShiftGrid(1.0), seed=31, shift_model="circular"  # type: ignore[arg-type]
        )
    with pytest.raises(ValueError):
        ProjectionMatcher(v, S, 4, ShiftGrid(1.0), seed=31, starts=0)

    shared = ProjectionMatcher(v, S, 4, ShiftGrid(1.0), seed=31, shift_model="shared")
    assert not shared.polish


def test_match_without_local_search() -> None:
    v = phantom(24, seed=15)
    S = CandidateSet(candidate_set(16).matrices[:40], 16)
    matcher = ProjectionMatcher(v, S, 6, ShiftGrid(2.0), seed=17, n_theta=72, polish=False)
    P = project(v, random_rotation_matrices(1, seed=16)[0])

    scores, planar = matcher.planar_scores(P)
    index = int(np.argmax(scores))
    result = matcher.match(P)
    assert result.index == index
    assert not result.polished
    assert result.rotation.allclose(S[index])
    assert result.shift == pytest.approx(tuple(planar[index]))
    assert result.score == scores[index]


def test_local_search_keeps_the_best_start() -> None:
    v = phantom(24, seed=15)
    S = CandidateSet(candidate_set(16).matrices[:40], 16)
    matcher = ProjectionMatcher(v, S, 6, ShiftGrid(2.0), seed=17, n_theta=72)
    P = project(v, random_rotation_matrices(1, seed=16)[0])

    scores, planar = matcher.planar_scores(P)
    best = int(np.argmax(scores))
    result = matcher.match(P)
    assert len(result.shift) == 2
    assert result.score >= matcher.continuous_score(P, S[best], planar[best]) - 1e-12
    if not result.polished:
        assert result.rotation.allclose(S[result.index])


def test_continuous_score() -> None:
    v = phantom(32, seed=33)
    matcher = ProjectionMatcher(v, candidate_set(8), 10, ShiftGrid(3.0), seed=34)
    R = random_rotation_matrices(1, seed=35)[0]
    image = project(v, R).data

    best = matcher.continuous_score(ProjectionImage(image), R, (0.0, 0.0))
    assert best >= 0.95
    others = [
        matcher.continuous_score(ProjectionImage(image), Q, (0.0, 0.0))
        for Q in random_rotation_matrices(50, seed=36)
    ]
    assert max(others) < best

    shifted = ProjectionImage(np.roll(image, (-2, 3), axis=(0, 1)))
    assert matcher.continuous_score(shifted, R, (-2.0, 3.0)) == pytest.approx(best, abs=0.02)


def test_recovers_grid_orientations() -> None:
    v = phantom(32, seed=18)
    S = candidate_set()
    matcher = ProjectionMatcher(v, S, 20, ShiftGrid.for_size(32), seed=19)
    projector = Projector(v)
    for index in np.random.default_rng(20).integers(len(S), size=3):
        result = matcher.match(projector.project(S[int(index)]))
        assert result.index == index
        assert not result.polished


def test_recovers_shifted_projection() -> None:
    v = phantom(32, seed=18)
    matcher = ProjectionMatcher(v, candidate_set(), 20, ShiftGrid.for_size(32), seed=19)
    R = random_rotation_matrices(1, seed=37)[0]
    image = np.roll(project(v, R).data, (3, 2), axis=(0, 1))

    result = matcher.match(ProjectionImage(image))
    assert np.rad2deg(geodesic_distance(result.rotation, R)) <= 7.0
    assert result.shift == pytest.approx((3.0, 2.0), abs=1.0)


@pytest.mark.slow
def test_recovers_grid_orientations_at_full_size() -> None:
    v = phantom(64, seed=40)
    S = candidate_set()
    matcher = ProjectionMatcher(v, S, 30, ShiftGrid.for_size(64), seed=41)
    projector = Projector(v)
    for index in np.random.default_rng(42).choice(len(S), size=20, replace=False):
        result = matcher.match(projector.project(S[int(index)]))
        assert result.index == index
        assert result.rotation.allclose(S[int(index)])


@pytest.mark.slow
def test_recovers_random_shifted_orientations() -> None:
    v = phantom(64, seed=21)
    matcher = ProjectionMatcher(v, candidate_set(), 30, ShiftGrid.for_size(64), seed=22)
    projector = Projector(v)
    rng = np.random.default_rng(23)

    errors = []
    for R in random_rotation_matrices(20, seed=rng):
        shift = tuple(int(s) for s in rng.integers(-4, 5, size=2))
        image = np.roll(projector.project(R).data, shift, axis=(0, 1))
        result = matcher.match(ProjectionImage(image))
        errors.append(np.rad2deg(geodesic_distance(result.rotation, R)))
    assert sum(error <= 7.0 for error in errors) >= 18


def test_align_projection_size_mismatch() -> None:
    S = candidate_set(8)
    P = project(phantom(16, seed=24), Rotation.identity())
    with pytest.raises(ShapeMismatchError):
        align_projection(P, phantom(24, seed=25), S, 4, ShiftGrid(1.0), seed=26)
