"""Exception hierarchy.

Every error carries a ``category`` used by the CLI to pick an exit code and
print a single machine-parsable line.
"""


class SohGraphError(Exception):
    category = "error"


class ValidationError(SohGraphError, ValueError):
    category = "validation"


class ConfigError(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class EmptyCycle(ValidationError):
    def __init__(self, cycle_index, message=None):
        self.cycle_index = cycle_index
        super().__init__(message or f"cycle {cycle_index} has no samples")


class WindowTooLong(ValidationError):
    pass


class FlatWindow(ValidationError):
    pass


class DegenerateSeries(ValidationError):
    pass


class BoundaryMismatch(ValidationError):
    pass


class EmptySlice(ValidationError):
    pass


class ThresholdNeverCrossed(ValidationError):
    def __init__(self, cycle_index, v_ref):
        self.cycle_index = cycle_index
        self.v_ref = v_ref
        super().__init__(f"cycle {cycle_index} never reaches {v_ref:.6g} V")


class SegmentTruncated(ValidationError):
    def __init__(self, cycle_index, available, needed):
        self.cycle_index = cycle_index
        self.available = available
        self.needed = needed
        super().__init__(
            f"cycle {cycle_index}: only {available} samples after the threshold "
            f"crossing, {needed} needed"
        )


class ConstantInput(ValidationError):
    pass


class MissingCycle(ValidationError):
    pass


class MissingLabel(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class StaleCache(ValidationError):
    pass


class NonPositiveDegree(ValidationError):
    pass


class NoTrainingCycles(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ArtifactError(SohGraphError, OSError):
    category = "io"


class CorruptArtifact(ArtifactError):
    pass


class VersionError(ArtifactError):
    pass


class DivergenceDetected(SohGraphError, ArithmeticError):
    category = "divergence"

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss!r}) at epoch {epoch}")
