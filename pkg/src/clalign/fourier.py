"""Centered Fourier transforms and non-uniform sampling of spectra.

Spectra are sampled off-grid with a type-2 non-uniform FFT: the signal is divided by the
Fourier transform of a Kaiser-Bessel kernel, zero-padded to twice its size, transformed
with an ordinary FFT and finally interpolated with the kernel at the requested
frequencies. The sampled quantity is the discrete-time Fourier transform
``f̂(ω) = Σₓ f(x)·exp(−i ω·x)`` with ``x`` measured from the grid center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import fft
from scipy.special import i0

from .core.objects import RotationLike, Volume, as_matrix, grid_center
from .exceptions import ShapeMismatchError

DEFAULT_N_THETA = 360
"""Default number of polar rays (1° angular spacing)"""


def fft3_centered(v: Volume, *, workers: int | None = None) -> Spectrum3D:
    """Returns the unitary 3D Fourier transform of ``v`` with zero frequency at the
    center voxel."""
    data = fft.fftshift(fft.fftn(fft.ifftshift(v.data), norm="ortho", workers=workers))
    return Spectrum3D(data)


def ifft3_centered(s: Spectrum3D, *, workers: int | None = None) -> Volume:
    """Inverse of :func:`fft3_centered`. The imaginary residue is discarded."""
    data = fft.fftshift(fft.ifftn(fft.ifftshift(s.data), norm="ortho", workers=workers))
    return Volume(data.real)


def fft2_centered(img: ArrayLike, *, workers: int | None = None) -> NDArray[np.complex128]:
    """Returns the unitary 2D Fourier transform of ``img`` with zero frequency at the
    center pixel."""
    return fft.fftshift(fft.fft2(fft.ifftshift(np.asarray(img)), norm="ortho", workers=workers))


def ifft2_centered(spectrum: ArrayLike, *, workers: int | None = None) -> NDArray[np.complex128]:
    """Inverse of :func:`fft2_centered`."""
    return fft.fftshift(
        fft.ifft2(fft.ifftshift(np.asarray(spectrum)), norm="ortho", workers=workers)
    )


def centered_frequencies(n: int) -> NDArray[np.float64]:
    """Returns the angular frequencies ``2πk/n`` of a centered grid of side ``n``."""
    return 2.0 * np.pi * (np.arange(n) - grid_center(n)) / n


@dataclass(frozen=True)
class KaiserBessel:
    """A Kaiser-Bessel interpolation kernel on an oversampled grid.

    The shape parameter follows the usual choice for an oversampling ratio ``alpha``:
    ``β = π·sqrt(W²/α²·(α − 1/2)² − 0.8)``.
    """

    width: int = 10
    """Kernel support in grid samples"""

    oversampling: float = 2.0

    @cached_property
    def beta(self) -> float:
        w, a = self.width, self.oversampling
        return math.pi * math.sqrt((w / a) ** 2 * (a - 0.5) ** 2 - 0.8)

    def kernel(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """Evaluates the kernel at offsets ``u`` (in oversampled grid units)."""
        arg = 1.0 - (2.0 * u / self.width) ** 2
        inside = arg >= 0.0
        return np.where(inside, i0(self.beta * np.sqrt(np.where(inside, arg, 0.0))), 0.0) / i0(
            self.beta
        )

    def transform(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        """Evaluates the continuous Fourier transform of :meth:`kernel` at ``t``
        (cycles per oversampled grid sample)."""
        z = np.sqrt(self.beta**2 - (np.pi * self.width * t) ** 2)
        return self.width * np.sinh(z) / z / i0(self.beta)


class NonUniformSampler:
    """Samples the discrete-time Fourier transform of a 2D or 3D array at arbitrary
    frequencies.

    Arguments:
        data (ArrayLike):
            A square (2D) or cubic (3D) array, indexed with its center at ``n // 2``.

    Keyword Arguments:
        kernel (KaiserBessel, optional):
            The interpolation kernel. The default reaches a relative accuracy well below
            1e-4 for oversampling 2.

        chunk_size (int, optional):
            Number of frequencies interpolated per batch. Bounds memory use.
    """

    def __init__(
        self,
        data: ArrayLike,
        *,
        kernel: KaiserBessel | None = None,
        chunk_size: int = 2048,
        workers: int | None = None,
    ) -> None:
        data = np.asarray(data)
        if data.ndim not in (2, 3) or len(set(data.shape)) != 1:
            raise ValueError(f"expected a square or cubic array, got shape {data.shape}")

        self.kernel = kernel or KaiserBessel()
        self.chunk_size = chunk_size
        self.n = data.shape[0]
        self.ndim = data.ndim
        self.m = int(round(self.kernel.oversampling * self.n))

        x = np.arange(self.n) - grid_center(self.n)
        weight = 1.0 / self.kernel.transform(x / self.m)
        compensated = data.astype(np.complex128)
        for axis in range(self.ndim):
            shape = [1] * self.ndim
            shape[axis] = self.n
            compensated = compensated * weight.reshape(shape)

        padded = np.zeros((self.m,) * self.ndim, dtype=np.complex128)
        index = x % self.m
        padded[np.ix_(*([index] * self.ndim))] = compensated
        self._grid = fft.fftn(padded, workers=workers)

    def __call__(self, omega: ArrayLike) -> NDArray[np.complex128]:
        """Returns ``Σₓ f(x)·exp(−i ω·x)`` for each row of ``omega`` (shape ``(P, ndim)``,
        radians per sample)."""
        omega = np.asarray(omega, dtype=np.float64).reshape(-1, self.ndim)
        width = self.kernel.width
        offsets = np.arange(width)
        out = np.empty(omega.shape[0], dtype=np.complex128)

        for start in range(0, omega.shape[0], self.chunk_size):
            u = omega[start : start + self.chunk_size] * (self.m / (2.0 * np.pi))
            p = u.shape[0]

            nodes = (np.floor(u) - width // 2 + 1).astype(np.int64)[..., None] + offsets
            weights = self.kernel.kernel(u[..., None] - nodes)
            nodes %= self.m

            index = tuple(
                nodes[:, axis].reshape(
                    (p,) + (1,) * axis + (width,) + (1,) * (self.ndim - 1 - axis)
                )
                for axis in range(self.ndim)
            )
            values = self._grid[index]
            for axis in reversed(range(self.ndim)):
                values = np.einsum("p...w,pw->p...", values, weights[:, axis])

            out[start : start + p] = values

        return out


@dataclass(frozen=True, eq=False)
class Spectrum3D:
    """The centered unitary 3D spectrum of a volume (see :func:`fft3_centered`)."""

    data: NDArray[np.complex128]

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @cached_property
    def sampler(self) -> NonUniformSampler:
        """A non-uniform sampler of this spectrum, built on first use"""
        spatial = fft.fftshift(fft.ifftn(fft.ifftshift(self.data), norm="ortho"))
        return NonUniformSampler(spatial)


def sample_central_slice(s: Spectrum3D, R: RotationLike, n: int) -> NDArray[np.complex128]:
    """Samples the central slice of ``s`` spanned by the first two columns of ``R``.

    Entry ``[i, j]`` holds the spectrum at ``ωx·R⁽¹⁾ + ωy·R⁽²⁾`` where ``ωx, ωy`` are the
    centered frequencies of indices ``i, j``. Values use the same unitary scaling as
    :func:`fft3_centered`, so ``R = I`` reproduces its ``ωz = 0`` plane.

    Raises:
        ShapeMismatchError: ``n`` is not the side length of ``s``.
    """
    if n != s.n:
        raise ShapeMismatchError(f"spectrum has side {s.n}, slice requested for side {n}")

    m = as_matrix(R)
    w = centered_frequencies(n)
    wx, wy = np.meshgrid(w, w, indexing="ij")
    points = wx.reshape(-1, 1) * m[:, 0] + wy.reshape(-1, 1) * m[:, 1]
    return (s.sampler(points) / n**1.5).reshape(n, n)


@dataclass(frozen=True, eq=False)
class PolarSpectrum:
    """An image spectrum resampled on rays through the origin.

    Ray ``k`` points at angle ``2πk/n_theta``; sample ``j`` of a ray lies at radius
    ``radii[j]`` (radians per pixel). The zero frequency is not sampled.
    """

    rays: NDArray[np.complex128]
    """Complex samples, shape ``(n_theta, n_r)``"""

    radii: NDArray[np.float64]

    @property
    def n_theta(self) -> int:
        return self.rays.shape[0]

    @property
    def n_r(self) -> int:
        return self.rays.shape[1]

    @property
    def angles(self) -> NDArray[np.float64]:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta


def default_n_r(n: int) -> int:
    """The default number of radial samples for images of side ``n``"""
    return math.ceil(n / 2)


def polar_ft(
    img: ArrayLike, n_theta: int = DEFAULT_N_THETA, n_r: int | None = None
) -> PolarSpectrum:
    """Resamples the spectrum of the square image ``img`` on a polar grid.

    Radial samples sit at ``ξⱼ = j·π/n_r`` for ``j = 1..n_r`` so the outermost sample
    reaches the Nyquist frequency. Values are the discrete-time Fourier transform divided
    by ``n``, which matches the unitary :func:`fft2_centered` on grid frequencies.

    Raises:
        ValueError: ``n_theta`` is odd (ray ``k + n_theta/2`` must be the antipode of ray ``k``).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"expected a square image, got shape {img.shape}")
    if n_theta < 2 or n_theta % 2:
        raise ValueError(f"n_theta must be a positive even number, got {n_theta}")

    n = img.shape[0]
    n_r = default_n_r(n) if n_r is None else n_r
    radii = np.arange(1, n_r + 1) * (np.pi / n_r)
    angles = 2.0 * np.pi * np.arange(n_theta) / n_theta

    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    points = (directions[:, None, :] * radii[None, :, None]).reshape(-1, 2)
    rays = NonUniformSampler(img)(points).reshape(n_theta, n_r) / n
    return PolarSpectrum(rays, radii)
