"""Exception hierarchy shared across the package."""


class StallnetError(Exception):
    """Base class for every error raised deliberately by stallnet."""


class InvalidArgument(StallnetError, ValueError):
    pass


class SchemaError(StallnetError, ValueError):
    """A flight CSV is missing a required column."""

    def __init__(self, column: str):
        super().__init__(f"missing required column: {column}")
        self.column = column


class ParseError(StallnetError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class FormatError(StallnetError, ValueError):
    pass


class CapacityError(StallnetError):
    """Not enough samples of one class to fill the requested splits."""

    def __init__(self, label: int, requested: int, available: int):
        self.label = label
        self.requested = requested
        self.available = available
        self.shortfall = requested - available
        super().__init__(
            f"class {label}: requested {requested}, available {available} "
            f"(shortfall={self.shortfall})"
        )


class NumericError(StallnetError, ArithmeticError):
    pass


class CorruptFile(StallnetError):
    pass


class VersionError(StallnetError):
    pass


class UndefinedMetric(StallnetError, ValueError):
    pass


class ConfigError(StallnetError):
    def __init__(self, key: str, message: str = "missing required key"):
        super().__init__(f"{message}: {key}")
        self.key = key
