"""Exception hierarchy shared by every sorbet module."""


class SorbetError(Exception):
    """Base class for all errors raised by sorbet."""


class PcdIOError(SorbetError, OSError):
    """A file could not be opened, read or written."""


class FormatError(SorbetError, ValueError):
    """Input bytes or text do not follow the expected layout."""


class ValidationError(SorbetError, ValueError):
    """A parsed value violates a type invariant."""


class SchemaError(FormatError):
    """A structured record is missing fields or has the wrong types."""


class SingularTransform(SorbetError, ValueError):
    pass


class FrameMismatch(SorbetError, ValueError):
    """Detection files refer to frames that have no ground truth."""


class PatternOutOfRange(SorbetError, ValueError):
    pass


class InsufficientHistory(SorbetError, ValueError):
    pass


class LengthMismatch(SorbetError, ValueError):
    pass


class EmptyInput(SorbetError, ValueError):
    pass
