"""Exception hierarchy shared by every czhash module."""


class CZHashError(Exception):
    """Base class for all library errors."""


class ConfigError(CZHashError, ValueError):
    """Invalid configuration value."""


class DatasetError(CZHashError):
    """Dataset files are malformed or violate an invariant."""


class ParseError(DatasetError):
    """A text file could not be parsed.

    ``path`` and ``line`` (1-based) locate the offending input.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ShapeError(CZHashError, ValueError):
    """Array or row counts do not line up."""


class SplitError(CZHashError, ValueError):
    """A scenario split cannot be constructed."""


class UndefinedSimilarityError(CZHashError, ValueError):
    """Jaccard similarity requested for an empty label set."""


class UndefinedAPError(CZHashError, ValueError):
    """Average precision requested for a query without relevant items."""


class NumericError(CZHashError, ArithmeticError):
    """Non-finite values or a singular system during optimisation."""
