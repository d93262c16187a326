from __future__ import annotations


class ClalignError(Exception):
    """Base class for every error raised by clalign"""

    pass


class VolumeFormatError(ClalignError):
    """A volume file could not be read because it is malformed or uses an unsupported layout"""

    pass


class CandidateCacheError(VolumeFormatError):
    """A cached candidate rotation set is malformed or was written for another grid"""

    pass


class ShapeMismatchError(ClalignError, ValueError):
    """Two volumes or images that must share a side length do not"""

    pass


class CommonLineError(ClalignError, ValueError):
    """The common line of two projections is undefined because their viewing directions
    are parallel"""

    pass


class DegenerateRotationError(ClalignError):
    """A rotation average was requested over matrices whose mean is rank deficient"""

    pass


class AxisUndefinedError(ClalignError, ValueError):
    """The rotation axis is undefined because the rotation is (numerically) the identity"""

    pass


class UnknownSymmetryError(ClalignError, ValueError):
    """The symmetry label is not one of the supported point groups"""

    pass
