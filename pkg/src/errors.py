"""
Error Module

Exception hierarchy shared by every ReFuSeg package. The CLI maps any
RefusegError to exit code 1.
"""

from typing import Dict, Optional


class RefusegError(Exception):
    """Base class for all errors raised by this project."""
    pass


class DimensionError(RefusegError):
    """Raised when tensor shapes do not line up."""
    pass


class ConfigurationError(RefusegError):
    """Raised when a configuration value or combination is invalid."""
    pass


class DegenerateBatchError(RefusegError):
    """Raised when batch statistics are undefined (fewer than two values)."""
    pass


class EmptyFusionError(RefusegError):
    """Raised when fusion is asked to combine zero modalities."""
    pass


class ContractError(RefusegError):
    """Raised when a caller breaks an API precondition."""
    pass


class PreconditionError(RefusegError):
    """Raised when an input violates a documented precondition."""
    pass


class AlignmentError(RefusegError):
    """Raised when per-modality volumes or label stacks disagree in extent."""
    pass


class BatchAlignmentError(RefusegError):
    """Raised when paired projections have different row counts."""
    pass


class DegenerateProjectionError(RefusegError):
    """Raised when a projection row has zero norm."""
    pass


class DataError(RefusegError):
    """Raised when label data holds values outside the class set."""
    pass


class NiftiFormatError(RefusegError):
    """Exception signalling errors encountered during NIfTI file parsing"""
    pass


class UnsupportedFormatError(NiftiFormatError):
    """Exception signalling that a file is not in the supported NIfTI subset"""
    pass


class UnsupportedDatatypeError(NiftiFormatError):
    """Exception signalling a datatype code outside the supported subset"""
    pass


class CorruptHeaderError(NiftiFormatError):
    """Exception signalling an inconsistency in a NIfTI header"""
    pass


class CorruptFileError(NiftiFormatError):
    """Exception signalling a truncated or unreadable NIfTI payload"""
    pass


class IncompatibleCheckpointError(RefusegError):
    """Raised when a checkpoint has the wrong magic or version."""
    pass


class CorruptCheckpointError(RefusegError):
    """Raised when a checkpoint is truncated or fails its checksum."""
    pass


class NonFiniteLossError(RefusegError):
    """Raised when training produces a NaN or infinite loss.

    Carries the step number and the component values at the time of failure
    so the caller can log a diagnostic snapshot.
    """

    def __init__(self, step: int, components: Dict[str, float], message: Optional[str] = None):
        self.step = step
        self.components = dict(components)
        detail = ", ".join(f"{name}={value!r}" for name, value in self.components.items())
        super().__init__(message or f"Non-finite loss at step {step}: {detail}")
