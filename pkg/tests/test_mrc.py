# Unit tests for MRC reading and writing
from __future__ import annotations

from pathlib import Path

import mrcfile
import numpy as np
import pytest

from clalign.core import Volume, read_volume, write_volume
from clalign.exceptions import VolumeFormatError


def test_round_trip(tmp_path: Path) -> None:
    """Maps written and read back keep their (x, y, z) indexing and voxel size."""
    data = np.zeros((6, 6, 6))
    data[1, 2, 3] = 7.0
    data[4, 0, 5] = -2.5
    path = tmp_path / "map.mrc"

    write_volume(path, Volume(data, voxel_size=1.25))
    v = read_volume(path)

    assert v.n == 6
    assert v.data[1, 2, 3] == 7.0
    assert v.data[4, 0, 5] == -2.5
    assert np.count_nonzero(v.data) == 2
    assert v.voxel_size == pytest.approx(1.25)


def test_strict_read(tmp_path: Path) -> None:
    path = tmp_path / "map.mrc"
    write_volume(path, Volume(np.ones((4, 4, 4))))
    assert read_volume(path, strict=True).n == 4


def test_wrong_mode(tmp_path: Path) -> None:
    path = tmp_path / "int16.mrc"
    with mrcfile.new(path) as mrc:
        mrc.set_data(np.zeros((4, 4, 4), dtype=np.int16))

    with pytest.raises(VolumeFormatError, match="header word 4"):
        read_volume(path)


def test_not_a_cube(tmp_path: Path) -> None:
    path = tmp_path / "box.mrc"
    with mrcfile.new(path) as mrc:
        mrc.set_data(np.zeros((6, 5, 4), dtype=np.float32))

    with pytest.raises(VolumeFormatError, match="header words 1-3"):
        read_volume(path)


def test_garbage(tmp_path: Path) -> None:
    path = tmp_path / "garbage.mrc"
    path.write_bytes(b"not an mrc file")

    with pytest.raises(VolumeFormatError):
        read_volume(path)


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(VolumeFormatError):
        read_volume(tmp_path / "missing.mrc")
