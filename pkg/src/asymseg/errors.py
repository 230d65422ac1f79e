"""Exception types shared across the package."""


class ShapeMismatch(ValueError):
    """Arrays that must share a shape do not."""


class LengthMismatch(ShapeMismatch):
    pass


class AnnotationError(ValueError):
    """An aspect-ratio annotation violates its geometric invariants."""


class NonIntersecting(AnnotationError):
    pass


class AngleOutOfRange(AnnotationError):
    pass


class Degenerate(AnnotationError):
    pass


class ShapeOutOfBounds(AnnotationError):
    """A generated pseudo-label boundary leaves the image grid."""


class ShapeOutOfBoundsWarning(UserWarning):
    pass


class EmptyInput(ValueError):
    pass


class EmptyMask(ValueError):
    pass


class TooThin(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class DegenerateSample(ValueError):
    pass


class FormatError(ValueError):
    """A dataset, checkpoint or annotation file is malformed."""


class ConfigError(ValueError):
    pass


class GraphNotRecorded(RuntimeError):
    """backward() was called on a value that carries no recorded graph."""


class NonFiniteLoss(FloatingPointError):
    pass
