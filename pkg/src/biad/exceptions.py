"""Exception types shared across the package."""


class BiadError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(BiadError, ValueError):
    """Invalid parameters or an inconsistent configuration."""


class ParseError(BiadError, ValueError):
    """A data file could not be parsed.

    ``row`` and ``column`` are 1-based positions in the file when known.
    """

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class ProtocolError(BiadError, ValueError):
    """Feedback stream violates the detector's input contract."""


class IncompleteLogError(ProtocolError):
    """Log ended before the detector reached a verdict."""


class ExhaustionError(BiadError, RuntimeError):
    """A player has no unshown items left to recommend."""


class DomainError(BiadError, ValueError):
    """Numeric argument outside the domain of a function."""
