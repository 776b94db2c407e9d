"""Exception hierarchy shared across the package."""


class MigcastError(Exception):
    """Base class for every error raised by migcast."""


class ShapeError(MigcastError, ValueError):
    pass


class ParameterError(MigcastError, ValueError):
    pass


class NumericalError(MigcastError, ArithmeticError):
    pass


class DomainError(MigcastError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class DataError(MigcastError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class RegistryError(MigcastError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "registry error"


class BoundsError(MigcastError, IndexError):
    pass


class DegenerateVarianceError(NumericalError):
    pass


class UnderdeterminedError(NumericalError):
    pass


class FetchError(MigcastError):
    def __init__(self, message, retriable=True):
        self.retriable = retriable
        super().__init__(message)


class RateLimitError(FetchError):
    def __init__(self, message):
        super().__init__(message, retriable=False)


class AssemblyError(DataError):
    pass


class CacheMissError(FetchError):
    """Raised in offline mode when a required series is not cached."""

    def __init__(self, keyword, geography):
        self.keyword = keyword
        self.geography = geography
        super().__init__(
            f"no cached series for keyword={keyword!r} geography={geography!r}",
            retriable=False,
        )
