"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """An operation argument (stride, padding, learning rate, label range, ...) is invalid."""


class ContractViolation(RuntimeError):
    """A caller broke an API precondition, e.g. reused a stale forward cache
    or passed structure values outside the clamped interior."""


class ConfigError(ValueError):
    """A run configuration is missing a key or holds an out-of-range value.

    The message always names the offending key.
    """


class DataFormatError(ValueError):
    """A data file is malformed; the message carries the byte offset at which
    parsing failed whenever one is known."""


class CheckpointError(RuntimeError):
    """A checkpoint file is unreadable, truncated, or from an incompatible
    format version. Loading never applies partial state."""


class NonFiniteLossError(RuntimeError):
    """Training encountered a NaN/Inf loss and aborted.

    ``snapshot_path`` points at the diagnostic state dump, if one was written.
    """

    def __init__(self, message: str, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
