"""Reading and writing volumes as MRC2014 files.

Only cubic mode-2 (32-bit float) maps are accepted. ``mrcfile`` stores data in
``(z, y, x)`` order, so arrays are transposed on the way in and out to keep the
``(x, y, z)`` indexing of :class:`~clalign.core.objects.Volume`.
"""

from __future__ import annotations

import logging
import os
from typing import Union

import mrcfile
import numpy as np

from ..exceptions import VolumeFormatError
from .objects import Volume

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

MODE_FLOAT32 = 2


def read_volume(path: PathLike, *, strict: bool = False) -> Volume:
    """Reads the MRC map at ``path``.

    Arguments:
        path (str | PathLike):
            The file to read.

    Keyword Arguments:
        strict (bool, optional):
            Whether to reject files with header inconsistencies that ``mrcfile`` can
            otherwise tolerate (bad map ID, wrong file size...). Defaults to False.

    Raises:
        VolumeFormatError: the file cannot be read, is not cubic or is not mode 2.
            The message names the offending header word.
    """
    try:
        with mrcfile.open(path, mode="r", header_only=True, permissive=True) as mrc:
            header = mrc.header
            if header is None:
                raise VolumeFormatError(f"{path}: header words 1-56 are unreadable")

            nx, ny, nz = int(header.nx), int(header.ny), int(header.nz)
            mode = int(header.mode)
    except (ValueError, OSError) as exc:
        raise VolumeFormatError(f"{path}: {exc}") from exc

    if not nx == ny == nz or nx < 1:
        raise VolumeFormatError(
            f"{path}: header words 1-3 (nx, ny, nz) are {nx}, {ny}, {nz}; expected a cube"
        )
    if mode != MODE_FLOAT32:
        raise VolumeFormatError(f"{path}: header word 4 (mode) is {mode}, expected 2")

    try:
        with mrcfile.open(path, mode="r", permissive=not strict) as mrc:
            if mrc.data is None or mrc.data.shape != (nz, ny, nx):
                raise VolumeFormatError(f"{path}: data block does not match header words 1-3")

            data = np.asarray(mrc.data, dtype=np.float64).transpose(2, 1, 0)
            voxel_size = float(mrc.voxel_size.x) or None
    except (ValueError, OSError) as exc:
        raise VolumeFormatError(f"{path}: {exc}") from exc

    logger.debug("read %s: n=%d voxel_size=%s", path, nx, voxel_size)
    try:
        return Volume(data, voxel_size=voxel_size)
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: {exc}") from exc


def write_volume(path: PathLike, volume: Volume, *, overwrite: bool = True) -> None:
    """Writes ``volume`` to ``path`` as a mode-2 MRC2014 map.

    Header fields other than the dimensions, mode and voxel size keep the defaults
    ``mrcfile`` writes.
    """
    with mrcfile.new(path, overwrite=overwrite) as mrc:
        mrc.set_data(volume.data.transpose(2, 1, 0).astype(np.float32))
        if volume.voxel_size is not None:
            mrc.voxel_size = volume.voxel_size

    logger.debug("wrote %s: n=%d", path, volume.n)
