"""Exception hierarchy shared by every catsnet module."""


class CatsNetError(Exception):
    """Base class for all errors raised by catsnet."""


class ShapeMismatch(CatsNetError, ValueError):
    pass


class DomainError(CatsNetError, ValueError):
    pass


class NotScalar(CatsNetError, ValueError):
    pass


class ParseError(CatsNetError, ValueError):
    pass


class EmptyFile(ParseError):
    pass


class DuplicateToken(ParseError):
    pass


class IdOutOfRange(CatsNetError, IndexError):
    pass


class AllMasked(CatsNetError, ValueError):
    """A query row had no valid key positions to attend to."""


class WiringInvalid(CatsNetError, ValueError):
    pass


class EmptyStack(CatsNetError, ValueError):
    pass


class EmptySentence(CatsNetError, ValueError):
    pass


class LabelOutOfRange(CatsNetError, ValueError):
    pass


class EmptyDataset(CatsNetError, ValueError):
    pass


class MalformedLine(ParseError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class BadLabel(MalformedLine):
    pass


class EmptyAfterTokenization(CatsNetError, ValueError):
    pass


class ConfigError(CatsNetError, ValueError):
    pass


class CorruptFile(CatsNetError, IOError):
    pass


class VersionMismatch(CorruptFile):
    pass
