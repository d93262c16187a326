# Unit tests for the volume model and resampling operations
from __future__ import annotations

import numpy as np
import pytest

from clalign.core import (
    RigidTransform,
    Rotation,
    Volume,
    apply_transform,
    correlation,
    downsample,
    grid_center,
    reflect,
)
from clalign.exceptions import ShapeMismatchError


def centered_grid(n: int) -> np.ndarray:
    axis = np.arange(n, dtype=np.float64) - grid_center(n)
    return np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)


def gaussian_blobs(n: int, centers: list[tuple[float, float, float]], sigma: float) -> Volume:
    r = centered_grid(n)
    data = np.zeros((n, n, n))
    for amplitude, center in enumerate(centers, start=1):
        data += amplitude * np.exp(-np.sum((r - center) ** 2, axis=-1) / (2 * sigma**2))
    return Volume(data)


def test_volume_validation() -> None:
    """Volumes must be finite cubes and are read-only once built."""
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 4, 5)))
    with pytest.raises(ValueError):
        Volume(np.full((3, 3, 3), np.nan))

    v = Volume(np.zeros((4, 4, 4)))
    assert v.n == 4
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0


def test_rotation_validation() -> None:
    with pytest.raises(ValueError):
        Rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Rotation(2 * np.eye(3))

    R = Rotation.from_axis_angle((0, 0, 1), np.pi / 2)
    assert np.allclose(R.m @ [1, 0, 0], [0, 1, 0])
    assert R.angle == pytest.approx(np.pi / 2)
    assert (R @ R.T).allclose(Rotation.identity())


def test_transform_inverse() -> None:
    """Inverting twice gives back the transform, for both handedness branches."""
    rotation = Rotation.from_axis_angle((1, 2, 3), 0.7)
    for reflected in (False, True):
        T = RigidTransform(rotation, (1.5, -2.0, 0.25), reflected)
        back = T.inverse().inverse()
        assert back.reflected is reflected
        assert back.rotation.allclose(T.rotation)
        assert np.allclose(back.translation, T.translation)

        # composing the affine maps r -> linear·r − t gives the identity
        inv = T.inverse()
        assert np.allclose(T.linear @ inv.linear, np.eye(3))
        assert np.allclose(inv.linear @ T.translation + inv.translation, 0.0)


def test_identity_transform_is_exact() -> None:
    rng = np.random.default_rng(1)
    v = Volume(rng.normal(size=(9, 9, 9)))
    assert np.array_equal(apply_transform(v, RigidTransform.identity()).data, v.data)


def test_integer_shift() -> None:
    """Integer shifts move voxels exactly and fill the vacated border with zeros."""
    rng = np.random.default_rng(2)
    v = Volume(rng.normal(size=(12, 12, 12)))
    out = apply_transform(v, RigidTransform(Rotation.identity(), (3, -2, 5)))

    expected = np.zeros_like(v.data)
    expected[3:, :-2, 5:] = v.data[:-3, 2:, :-5]
    assert np.array_equal(out.data, expected)


def test_quarter_turn_matches_analytic_sphere() -> None:
    n, radius = 32, 5.5
    mu = np.array([4.0, -3.0, 2.0])
    r = centered_grid(n)
    v = Volume((np.sum((r - mu) ** 2, axis=-1) <= radius**2).astype(np.float64))

    R = Rotation.from_axis_angle((0, 0, 1), np.pi / 2)
    out = apply_transform(v, RigidTransform(R))

    center = R.m.T @ mu
    expected = (np.sum((r - center) ** 2, axis=-1) <= radius**2).astype(np.float64)
    assert np.linalg.norm(out.data - expected) <= 1e-6 * np.linalg.norm(expected)


def test_translation_too_large() -> None:
    v = Volume(np.zeros((8, 8, 8)))
    with pytest.raises(ValueError):
        apply_transform(v, RigidTransform(Rotation.identity(), (8.0, 0.0, 0.0)))


@pytest.mark.parametrize("reflected", [False, True])
def test_transform_round_trip(reflected: bool) -> None:
    """Applying a transform and then its inverse restores a smooth volume."""
    v = gaussian_blobs(32, [(3, -2, 1), (-4, 2, -3), (0, 5, 2)], sigma=3.0)
    T = RigidTransform(Rotation.from_axis_angle((0.3, -1, 0.5), 1.1), (1.5, -2.25, 0.5), reflected)

    back = apply_transform(apply_transform(v, T), T.inverse())
    assert np.linalg.norm(back.data - v.data) <= 0.05 * np.linalg.norm(v.data)


@pytest.mark.parametrize("n", [8, 9])
def test_reflect(n: int) -> None:
    rng = np.random.default_rng(n)
    v = Volume(rng.normal(size=(n, n, n)))
    flipped = reflect(v)

    assert np.array_equal(reflect(flipped).data, v.data)
    c = grid_center(n)
    assert flipped.data[1, 2, 3] == v.data[1, 2, (2 * c - 3) % n]


def test_reflect_symmetric_volume() -> None:
    n = 9
    r = centered_grid(n)
    v = Volume(np.exp(-(r[..., 0] ** 2) / 4 - r[..., 1] / 3) * np.cos(r[..., 2]))
    assert np.array_equal(reflect(v).data, v.data)


def test_correlation() -> None:
    rng = np.random.default_rng(3)
    v = Volume(rng.normal(size=(6, 6, 6)))
    w = Volume(rng.normal(size=(6, 6, 6)))

    assert correlation(v, v) == pytest.approx(1.0)
    assert correlation(v, v.with_data(-v.data)) == pytest.approx(-1.0)
    assert correlation(v, v.with_data(v.data + 3.0)) == pytest.approx(1.0)
    rescaled = w.with_data(2.5 * w.data - 7)
    assert correlation(v, w) == pytest.approx(correlation(v, rescaled), abs=1e-12)
    assert correlation(v, Volume(np.ones((6, 6, 6)))) == 0.0

    with pytest.raises(ShapeMismatchError):
        correlation(v, Volume(np.zeros((5, 5, 5))))


def test_downsample_same_size() -> None:
    rng = np.random.default_rng(4)
    v = Volume(rng.normal(size=(10, 10, 10)), voxel_size=1.5)
    out = downsample(v, 10)
    assert np.allclose(out.data, v.data, atol=1e-10)
    assert out.voxel_size == 1.5

    with pytest.raises(ValueError):
        downsample(v, 11)
    with pytest.raises(ValueError):
        downsample(v, 0)


@pytest.mark.parametrize("n_ds", [15, 16])
def test_downsample_band_limited(n_ds: int) -> None:
    """A volume whose spectrum fits inside the kept band is resampled exactly."""
    n = 32
    rng = np.random.default_rng(5)
    waves = [(rng.integers(-3, 4, size=3), rng.uniform(0, 2 * np.pi)) for _ in range(5)]

    def evaluate(size: int) -> np.ndarray:
        r = centered_grid(size)
        return sum(np.cos(2 * np.pi * (r @ k) / size + phase) for k, phase in waves)

    out = downsample(Volume(evaluate(n), voxel_size=1.0), n_ds)
    expected = evaluate(n_ds)
    assert np.linalg.norm(out.data - expected) <= 1e-8 * np.linalg.norm(expected)
    assert out.voxel_size == pytest.approx(n / n_ds)


def test_downsample_noise_energy() -> None:
    """White noise keeps the share of its energy that lies in the kept band."""
    rng = np.random.default_rng(6)
    v = Volume(rng.normal(size=(64, 64, 64)))
    out = downsample(v, 31)
    ratio = np.sum(out.data**2) / np.sum(v.data**2)
    assert ratio == pytest.approx((31 / 64) ** 6, rel=0.05)


@pytest.mark.parametrize("n_ds", [15, 16])
def test_downsample_commutes_with_reflect(n_ds: int) -> None:
    rng = np.random.default_rng(7)
    v = Volume(rng.normal(size=(32, 32, 32)))
    a = downsample(reflect(v), n_ds).data
    b = reflect(downsample(v, n_ds)).data
    assert np.allclose(a, b, atol=1e-10 * np.abs(b).max())
