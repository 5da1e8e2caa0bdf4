"""Exception types shared across the package."""


class AnnealGanError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(AnnealGanError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class UsageError(AnnealGanError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""


class NonFiniteError(AnnealGanError, FloatingPointError):
    """A value that must be finite was NaN or infinite."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ConfigError(AnnealGanError, ValueError):
    """Malformed or semantically invalid run configuration."""

    def __init__(self, message, line=None, column=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.column = column
        self.key = key
