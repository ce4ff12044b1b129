"""Exception hierarchy for izaber_catt.

Every error carries the process exit code the CLI uses when it escapes a
command. ``OSError`` is not wrapped; the CLI maps it to ``EXIT_IO``.
"""

EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_ACCEPTANCE = 5


class CattError(Exception):
    exit_code = EXIT_VALIDATION


class ConfigurationError(CattError):
    """A configuration value is missing, out of range or inconsistent."""
    exit_code = EXIT_CONFIGURATION


class DimensionError(CattError):
    """Operand shapes do not line up."""


class EmptyKeyError(DimensionError):
    """Attention over an empty key set."""


class ContractError(CattError):
    """An API precondition that is not about shapes was broken."""


class InputError(CattError):
    """Data handed in from outside (ids, points, batches) is unusable."""


class ParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)


class ValidationError(CattError):
    """A probability table or distribution fails its invariants."""


class ConditioningError(CattError):
    """Conditioning on a zero-probability event."""


class PositivityError(ConditioningError):
    def __init__(self, message, cell):
        self.cell = cell
        super().__init__("{} (cell {})".format(message, cell))


class DomainError(CattError):
    """A value lies outside the mathematical domain of the operation."""


class CheckpointError(CattError):
    """A checkpoint file does not match the parameters it is loaded into."""


class AcceptanceError(CattError):
    """A gradcheck or benchmark criterion was not met."""
    exit_code = EXIT_ACCEPTANCE
