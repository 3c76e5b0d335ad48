"""Exception types shared across the package."""


class DoucError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DoucError):
    """Operands have incompatible or unexpected shapes."""


class NumericError(DoucError):
    """A computation produced non-finite values."""


class TensorFileError(DoucError):
    """Base class for tensor-file format errors."""


class BadMagicError(TensorFileError):
    """File does not start with the expected magic bytes."""


class UnsupportedDtypeError(TensorFileError):
    """Tensor file declares a dtype this reader does not support."""


class PayloadMismatchError(TensorFileError):
    """Payload length does not match the declared shape."""


class ManifestError(DoucError):
    """Manifest is malformed or references missing or misshapen tensors."""


class ConfigError(DoucError):
    """Run configuration is invalid."""


class DegenerateInputError(DoucError):
    """An input is degenerate for the requested operation (e.g. a zero vector)."""


class PipelineError(DoucError):
    """Failure inside the per-image pipeline, labeled with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
