"""Exception hierarchy, one class per CLI exit code family."""


class SketchRecError(Exception):
    """Base class for all sketchrec errors."""

    exit_code = 1


class ConfigError(SketchRecError):
    """Bad or inconsistent configuration."""

    exit_code = 2


class DataError(SketchRecError):
    """Input data violates a documented format or invariant."""

    exit_code = 3


class DataFormatError(DataError):
    """Malformed input file."""


class MissingMetadataError(DataError):
    """An item or entity lacks required metadata or codes."""


class ContractError(DataError):
    """A call violated an operation precondition."""


class NumericError(SketchRecError):
    """A numeric computation produced non-finite values."""

    exit_code = 4


class DivergenceError(NumericError):
    """Training loss became non-finite.

    Carries the parameters from the last epoch that finished with a
    finite loss so callers can checkpoint them.
    """

    def __init__(self, message: str, model=None):
        super().__init__(message)
        self.model = model
