"""Exception types shared across the package.

ValidationError covers bad inputs, bad configs and malformed files; the CLI
maps it to exit code 1, any other failure to exit code 2.
"""


class IntentRecError(Exception):
    pass


class ValidationError(IntentRecError):
    pass


class ShapeError(ValidationError):
    """Operand shapes do not conform to an op's shape rule."""


class GraphUsageError(IntentRecError):
    """Autodiff API misuse, e.g. backward() without a recorded forward pass."""


class ConfigError(ValidationError):
    """Bad configuration key or value."""


class DatasetFormatError(ValidationError):
    """Malformed dataset file; carries file, line number and field."""

    def __init__(self, path, line_no, field, message):
        self.path = str(path)
        self.line_no = line_no
        self.field = field
        super().__init__(f"{self.path}:{line_no}: field '{field}': {message}")


class CheckpointFormatError(ValidationError):
    """Checkpoint file does not match the expected versioned format."""


class SamplingIntegrityError(ValidationError):
    """Exposure/context tables are inconsistent with each other."""


class UndefinedMetricError(ValidationError):
    """Metric has no defined value on the given inputs (e.g. single-class AUC)."""


class OptimizerError(IntentRecError):
    """Non-finite gradient or malformed optimizer state."""
