"""Exception hierarchy.

Every error carries a short ``category`` used by the command line to emit a
single machine-parsable line.
"""


class MotionSynthError(Exception):
    category = "Error"


class SingularJacobian(MotionSynthError, ValueError):
    category = "SingularJacobian"


class EmptySet(MotionSynthError, ValueError):
    category = "EmptySet"


class ResolutionMismatch(MotionSynthError, ValueError):
    category = "ResolutionMismatch"


class ShapeMismatch(MotionSynthError, ValueError):
    category = "ShapeMismatch"


class IndexOutOfRange(MotionSynthError, IndexError):
    category = "IndexOutOfRange"


class ExtractorUnavailable(MotionSynthError, RuntimeError):
    category = "ExtractorUnavailable"


class FeatureShapeMismatch(MotionSynthError, ValueError):
    category = "FeatureShapeMismatch"


class WindowLargerThanImage(MotionSynthError, ValueError):
    category = "WindowLargerThanImage"


class DimensionMismatch(MotionSynthError, ValueError):
    category = "DimensionMismatch"


class NonConvergentSqrt(MotionSynthError, ArithmeticError):
    category = "NonConvergentSqrt"


class InvalidConfig(MotionSynthError, ValueError):
    category = "InvalidConfig"


class MissingFrames(MotionSynthError, FileNotFoundError):
    category = "MissingFrames"


class MalformedAnnotation(MotionSynthError, ValueError):
    category = "MalformedAnnotation"


class VideoTooShort(MotionSynthError, ValueError):
    category = "VideoTooShort"


class ClipTooLong(MotionSynthError, ValueError):
    category = "ClipTooLong"


class NonFiniteLoss(MotionSynthError, FloatingPointError):
    category = "NonFiniteLoss"

    def __init__(self, component, value=None):
        self.component = component
        super().__init__(f"non-finite loss in component {component!r} (value={value})")


class EmptyDirectory(MotionSynthError, FileNotFoundError):
    category = "EmptyDirectory"


class MissingCheckpoint(MotionSynthError, FileNotFoundError):
    category = "MissingCheckpoint"
