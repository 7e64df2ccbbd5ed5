"""Exception types raised across the toolkit.

Everything derives from ``PoseKitError`` (a ``ValueError``) so callers and the
CLI can treat them as validation failures.
"""


class PoseKitError(ValueError):
    pass


class DegenerateMatrix(PoseKitError):
    """Matrix too close to rank < 2 to have a well-defined nearest rotation."""


class DegenerateInput(PoseKitError):
    pass


class NearDegenerateSVD(PoseKitError):
    """Singular values too close for the SVD differential to be stable."""


class BehindCamera(PoseKitError):
    pass


class InvalidDepth(PoseKitError):
    pass


class RangeError(PoseKitError):
    pass


class ShapeError(PoseKitError):
    pass


class InvalidBox(PoseKitError):
    pass
