"""Exception hierarchy shared across the package.

Exit-code mapping used by the command line front end:
  UsageError -> 2, DataError -> 3, NumericError -> 4.
"""


class NgramlmError(Exception):
    pass


class UsageError(NgramlmError):
    """Bad arguments or configuration."""


class DataError(NgramlmError):
    """Malformed or inconsistent input data."""


class CorpusDecodeError(DataError):
    def __init__(self, path, byte_offset, reason):
        super().__init__(f"{path}: invalid UTF-8 at byte {byte_offset}: {reason}")
        self.path = path
        self.byte_offset = byte_offset


class DomainError(DataError):
    """A statistic was requested for an item outside its domain."""


class DegenerateStatisticError(DomainError):
    """The t-statistic denominator vanished (n-gram is the whole corpus)."""


class PlanError(DataError):
    """A mask plan could not be constructed from the given inputs."""


class PlanFormatError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(DataError):
    """File format or checkpoint version mismatch."""


class NumericError(NgramlmError):
    """Non-finite values encountered during computation."""
