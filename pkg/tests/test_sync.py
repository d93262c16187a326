# Unit tests for rotation synchronization and averaging
from __future__ import annotations

import numpy as np
import pytest

from clalign.core import REFLECTION_Z as J
from clalign.core import Rotation
from clalign.exceptions import DegenerateRotationError
from clalign.projector import random_rotations
from clalign.symmetry import group_elements
from clalign.sync import (
    SyncProblem,
    build_X,
    nearest_rotation,
    relative_elements,
    svd_rotation_average,
    synchronization_matrix,
    synchronize,
)


def test_exact_recovery() -> None:
    O = random_rotations(1, seed=1)[0]
    views = random_rotations(10, seed=2)
    result = synchronize(SyncProblem(views, [O @ R for R in views]))

    assert result.O_est.allclose(O, atol=1e-8)
    assert np.allclose(result.g_est[0], np.eye(3))
    assert result.eigengap == pytest.approx(10.0)
    assert not result.warnings
    assert not result.degenerate

    assert np.allclose(result.eigenvalues[:3], 10.0, rtol=0.0, atol=1e-8)
    assert np.allclose(result.eigenvalues[3:], 0.0, rtol=0.0, atol=1e-8)
    assert np.allclose(result.g_est[0], np.eye(3), rtol=0.0, atol=1e-10)


def test_exact_recovery_with_symmetry() -> None:
    """With a C4 volume every estimate may carry its own group element."""
    group = group_elements("C", 4)
    O = random_rotations(1, seed=3)[0]
    views = random_rotations(12, seed=4)
    picks = np.random.default_rng(5).integers(len(group), size=12)
    g = [group.elements[int(k)] for k in picks]

    p = SyncProblem(views, [gi @ O @ R for gi, R in zip(g, views)])
    X = build_X(p)
    assert np.allclose(X[2].T @ X[7], (g[2] @ g[7].T).m)

    H = synchronization_matrix(X)
    assert H.shape == (36, 36)
    assert np.allclose(H[6:9, 21:24], X[2].T @ X[7])

    result = synchronize(p)
    assert result.O_est.allclose(g[0] @ O, atol=1e-8)
    for gi, estimate in zip(g, result.g_est):
        assert np.allclose(estimate, (gi @ g[0].T).m, atol=1e-8)


def test_reflected_branch() -> None:
    O = random_rotations(1, seed=6)[0]
    views = random_rotations(8, seed=7)
    estimates = [Rotation(O.m @ J @ R.m @ J) for R in views]

    result = synchronize(SyncProblem(views, estimates, reflected=True))
    assert result.O_est.allclose(O, atol=1e-8)


def test_problem_validation() -> None:
    views = random_rotations(3, seed=8)
    with pytest.raises(ValueError):
        SyncProblem(views, views[:2])
    with pytest.raises(ValueError):
        SyncProblem(views[:1], views[:1])


def test_rotation_average() -> None:
    R = random_rotations(1, seed=9)[0]
    assert svd_rotation_average([R, R]).allclose(R)

    axis = np.array([1.0, -2.0, 0.5])
    a = Rotation.from_axis_angle(axis, 0.2)
    b = Rotation.from_axis_angle(axis, 0.6)
    assert svd_rotation_average([a, b]).allclose(Rotation.from_axis_angle(axis, 0.4))


def test_rotation_average_degenerate() -> None:
    with pytest.raises(DegenerateRotationError):
        svd_rotation_average([np.eye(3), Rotation.from_axis_angle((0, 0, 1), np.pi)])
    with pytest.raises(ValueError):
        svd_rotation_average([])


def test_nearest_rotation() -> None:
    R = random_rotations(1, seed=10)[0]
    noisy = R.m + 1e-3 * np.random.default_rng(11).normal(size=(3, 3))
    assert nearest_rotation(noisy).allclose(R, atol=1e-2)

    flipped = nearest_rotation(R.m @ J)
    assert np.linalg.det(flipped.m) == pytest.approx(1.0)


def test_relative_elements_ignore_mixing() -> None:
    """Any invertible mixing of the leading eigenvectors yields the same estimates."""
    group = group_elements("C", 4)
    picks = np.random.default_rng(12).integers(len(group), size=6)
    g = [group.elements[int(k)].m for k in picks]
    W = np.array([[2.0, 0.3, -0.1], [0.0, 0.7, 0.4], [0.2, 0.0, 1.5]])

    estimates = relative_elements(np.concatenate([gi @ W for gi in g]))
    for gi, estimate in zip(g, estimates):
        assert np.allclose(estimate @ estimate.T, np.eye(3), atol=1e-8)
        assert np.allclose(estimate, gi @ g[0].T, atol=1e-8)

    with pytest.raises(ValueError):
        relative_elements(np.zeros((7, 3)))


def noisy_c4_problem(seed: int) -> SyncProblem:
    rng = np.random.default_rng(seed)
    group = group_elements("C", 4)
    O = random_rotations(1, seed=rng)[0]
    views = random_rotations(15, seed=rng)

    estimates = []
    for R in views:
        g = group.elements[int(rng.integers(len(group)))]
        noise = Rotation.from_axis_angle(rng.normal(size=3), rng.uniform(0.0, 0.1))
        estimates.append(noise @ g @ O @ R)
    return SyncProblem(views, estimates)


def test_left_rotation_of_estimates() -> None:
    p = noisy_c4_problem(13)
    K = random_rotations(1, seed=14)[0]

    base = synchronize(p)
    turned = synchronize(SyncProblem(p.R, [K @ rt for rt in p.Rt]))
    assert turned.O_est.allclose(K @ base.O_est, atol=1e-8)


def test_right_rotation_of_both_frames() -> None:
    p = noisy_c4_problem(15)
    K = random_rotations(1, seed=16)[0]

    base = synchronize(p)
    turned = synchronize(SyncProblem([r @ K for r in p.R], [rt @ K for rt in p.Rt]))
    assert turned.O_est.allclose(base.O_est, atol=1e-8)
