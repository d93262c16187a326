from __future__ import annotations

import numpy as np
from numpy.typing import NDArray
from scipy import fft
from scipy.ndimage import map_coordinates

from ..exceptions import ShapeMismatchError
from .objects import RigidTransform, Volume, grid_center


def _integer_shift(data: NDArray[np.float64], shift: NDArray[np.int64]) -> NDArray[np.float64]:
    """Returns ``out[i] = data[i - shift]`` with zeros shifted in (no wrap-around)."""
    n = data.shape[0]
    out = np.zeros_like(data)
    dst, src = [], []
    for s in shift:
        s = int(s)
        dst.append(slice(max(s, 0), n + min(s, 0)))
        src.append(slice(max(-s, 0), n - max(s, 0)))

    out[tuple(dst)] = data[tuple(src)]
    return out


def apply_transform(v: Volume, T: RigidTransform) -> Volume:
    """Resamples ``v`` under the rigid transform ``T``.

    The output satisfies ``out(r) = v(O·Jᵘ·r − t)`` with ``r`` measured from the grid center.
    Samples are trilinearly interpolated; samples falling outside the grid are zero. Identity
    rotations with integer translations take an exact copying path.

    Raises:
        ValueError: a translation component is at least ``n`` in magnitude.
    """
    n = v.n
    if np.any(np.abs(T.translation) >= n):
        raise ValueError(f"translation {T.translation.tolist()} exceeds the grid size {n}")

    linear = T.linear
    t = T.translation
    if np.array_equal(linear, np.eye(3)) and np.array_equal(t, np.round(t)):
        return v.with_data(_integer_shift(v.data, t.astype(np.int64)))

    c = grid_center(n)
    axis = np.arange(n, dtype=np.float64) - c
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=0).reshape(3, -1)

    coords = linear @ grid - t[:, None] + c
    out = map_coordinates(v.data, coords, order=1, mode="constant", cval=0.0)
    return v.with_data(out.reshape(n, n, n))


def reflect(v: Volume) -> Volume:
    """Flips ``v`` along z about the grid center.

    Voxel ``(x, y, z)`` moves to ``(x, y, 2c − z)``. Indices wrap modulo ``n``, so on even
    grids the plane ``z = 0`` maps onto itself and the flip stays an exact involution.
    """
    n = v.n
    index = (2 * grid_center(n) - np.arange(n)) % n
    return v.with_data(v.data[:, :, index])


def correlation(a: Volume, b: Volume) -> float:
    """Returns the Pearson correlation of the voxel values of ``a`` and ``b``.

    Returns 0 if either volume is constant.

    Raises:
        ShapeMismatchError: the volumes have different sizes.
    """
    if a.n != b.n:
        raise ShapeMismatchError(f"cannot correlate volumes of size {a.n} and {b.n}")

    x = a.data - a.data.mean()
    y = b.data - b.data.mean()
    norm = np.linalg.norm(x) * np.linalg.norm(y)
    if norm == 0.0:
        return 0.0

    return float(np.clip(np.vdot(x, y) / norm, -1.0, 1.0))


def _fold_nyquist(block: NDArray[np.complex128]) -> NDArray[np.complex128]:
    # drop the last sample of every axis after averaging it into the first (±N/2 planes)
    for axis in range(block.ndim):
        first = np.take(block, [0], axis=axis)
        last = np.take(block, [-1], axis=axis)
        block = np.concatenate(
            [(first + last) / 2.0, np.take(block, range(1, block.shape[axis] - 1), axis=axis)],
            axis=axis,
        )
    return block


def downsample(v: Volume, n_ds: int, *, workers: int | None = None) -> Volume:
    """Downsamples ``v`` to side ``n_ds`` by cropping its centered Fourier transform.

    The central ``n_ds³`` block of the spectrum is kept and inverse-transformed. When
    ``n_ds`` is even the two Nyquist planes of each axis are averaged so that the cropped
    spectrum stays Hermitian. Values are scaled by ``(n_ds / n)³`` so that a band-limited
    volume is resampled without changing its intensities.

    Raises:
        ValueError: ``n_ds`` is not positive or exceeds ``n``.
    """
    n = v.n
    if n_ds < 1 or n_ds > n:
        raise ValueError(f"cannot downsample a volume of size {n} to size {n_ds}")
    if n_ds == n:
        return v.with_data(v.data.copy())

    spectrum = fft.fftshift(fft.fftn(fft.ifftshift(v.data), workers=workers))
    c, h = grid_center(n), n_ds // 2
    fold = n_ds % 2 == 0
    stop = c - h + n_ds + (1 if fold else 0)
    block = spectrum[c - h : stop, c - h : stop, c - h : stop]
    if fold:
        block = _fold_nyquist(block)

    data = fft.fftshift(fft.ifftn(fft.ifftshift(block), workers=workers)).real
    voxel_size = None if v.voxel_size is None else v.voxel_size * n / n_ds
    return Volume(data * (n_ds / n) ** 3, voxel_size=voxel_size)
