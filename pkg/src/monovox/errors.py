"""Exception and warning types shared across the package."""


class MonovoxError(Exception):
    """Base class for all package errors."""


class FormatError(MonovoxError, ValueError):
    """Input does not follow the expected file layout."""


class ParseError(FormatError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ValidationError(MonovoxError, ValueError):
    """A record violates a domain invariant."""


class ConsistencyError(MonovoxError, ValueError):
    """Two inputs disagree with each other (missing frames, unmapped ids)."""


class DomainError(MonovoxError, ValueError):
    """A numeric argument lies outside the operation's domain."""


class BehindCameraError(DomainError):
    pass


class EmptyRoiError(MonovoxError, ValueError):
    pass


class DegenerateGridError(MonovoxError, ValueError):
    pass


class DegenerateCloudWarning(UserWarning):
    pass


class NoPeakWarning(UserWarning):
    pass


class EmptySplitWarning(UserWarning):
    pass


class BehindCameraWarning(UserWarning):
    pass
