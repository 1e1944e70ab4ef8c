"""Exception hierarchy shared by every subpackage."""


class OmnimixerError(Exception):
    """Base class for all package errors."""


class ShapeError(OmnimixerError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(OmnimixerError, ValueError):
    """A configuration value is out of its legal range."""


class DomainError(OmnimixerError, ValueError):
    """A numeric operation was asked to leave its domain (e.g. log of a non-positive value)."""


class ContractError(OmnimixerError, RuntimeError):
    """A caller violated an operation's precondition."""


class LabelError(OmnimixerError, IndexError):
    """Scene label outside ``[0, num_classes)``."""


class DataError(OmnimixerError):
    """Input data could not be decoded or has the wrong layout."""


class NonFiniteLossError(OmnimixerError, FloatingPointError):
    """A training objective produced NaN or Inf."""

    def __init__(self, iteration: int, component: str, value: float):
        self.iteration = iteration
        self.component = component
        self.value = value
        super().__init__(
            f"non-finite loss at iteration {iteration}: {component} = {value!r}"
        )


class CheckpointError(OmnimixerError):
    """Base class for checkpoint (de)serialization failures."""


class CheckpointFormatError(CheckpointError):
    """The file is not a checkpoint (bad magic bytes or malformed header)."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint format version, or the stored config, is incompatible."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before the declared payload."""


class UnknownTensorError(CheckpointError, KeyError):
    """A stored tensor name has no counterpart in the model registry."""
