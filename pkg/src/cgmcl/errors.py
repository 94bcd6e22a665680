"""Exception hierarchy shared across the package.

The CLI maps ``ValidationError`` subclasses to exit code 1 and
``NumericalError`` to exit code 2.
"""


class CGMCLError(Exception):
    pass


class ValidationError(CGMCLError):
    pass


class ConfigError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class JoinError(DataError):
    def __init__(self, message: str, orphans: dict[str, list[str]] | None = None):
        super().__init__(message)
        self.orphans = orphans or {}


class ParseError(DataError):
    pass


class StratificationError(DataError):
    pass


class ContractError(CGMCLError):
    pass


class DomainError(CGMCLError):
    pass


class NumericalError(CGMCLError):
    pass


class ReproducibilityError(CGMCLError):
    pass
