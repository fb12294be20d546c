"""Exception taxonomy shared across the package."""


class DensesepError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(DensesepError, ValueError):
    """Operands have incompatible shapes."""


class GraphError(DensesepError, RuntimeError):
    """Invalid use of the autodiff tape (wrong graph, non-scalar root, ...)."""


class GradientCheckError(DensesepError, ArithmeticError):
    """A gradient check produced a non-finite value."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class SpecError(DensesepError, ValueError):
    """An architecture spec violates one of its invariants."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class WavError(DensesepError):
    """Base class for WAV file problems."""


class WavHeaderError(WavError):
    """Malformed RIFF/WAVE header."""


class WavCodecError(WavError):
    """Recognized WAV file with an unsupported sample format."""


class WavTruncatedError(WavError):
    """Payload shorter than the header declares."""


class FingerprintError(DensesepError):
    """Architecture fingerprint does not match the expected one."""


class CheckpointError(DensesepError):
    """Base class for checkpoint container problems."""


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint format version."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor's shape disagrees with the target model."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint payload shorter than the header declares."""


class GradientNaNError(DensesepError):
    """An optimizer step received a non-finite gradient."""

    def __init__(self, parameter):
        super().__init__(f"non-finite gradient for parameter {parameter!r}")
        self.parameter = parameter


class TrainingDivergedError(DensesepError):
    """Training loss became non-finite; the last good checkpoint is kept."""

    def __init__(self, step, last_checkpoint=None):
        msg = f"training loss became non-finite at step {step}"
        if last_checkpoint is not None:
            msg += f" (last good checkpoint: {last_checkpoint})"
        super().__init__(msg)
        self.step = step
        self.last_checkpoint = last_checkpoint
