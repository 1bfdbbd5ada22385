"""Exception types raised across the package."""


class MosaicError(Exception):
    """Base class for all package errors."""


# geometry
class DegenerateQuad(MosaicError):
    pass


class SingularSystem(MosaicError):
    pass


class SingularMatrix(MosaicError):
    pass


class SingularResult(MosaicError):
    pass


class PointAtInfinity(MosaicError):
    pass


class ReflectionDetected(MosaicError):
    pass


class NearSingular(MosaicError):
    pass


# imaging / data
class OutOfBounds(MosaicError):
    pass


class FrameTooSmall(MosaicError):
    pass


class TextureTooSmall(MosaicError):
    pass


class MalformedFile(MosaicError):
    pass


class SizeMismatch(MosaicError):
    pass


class MaskOutsideFrame(MosaicError):
    pass


class CanvasTooLarge(MosaicError):
    """Canvas would exceed the configured pixel cap (diverging pose chain)."""


# estimation
class DegenerateInput(MosaicError):
    pass


class InsufficientFeatures(MosaicError):
    pass


class MissingPrediction(MosaicError):
    pass


class TooFewValid(MosaicError):
    def __init__(self, pair_index, valid, required):
        super().__init__(
            f"pair {pair_index}: only {valid} valid estimates, {required} required"
        )
        self.pair_index = pair_index
        self.valid = valid
        self.required = required


# metrics
class EmptyOverlap(MosaicError):
    pass


class LengthMismatch(MosaicError):
    pass
