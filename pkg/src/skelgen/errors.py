"""Exception types shared across the package."""


class SkelgenError(Exception):
    pass


class DimensionError(SkelgenError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(SkelgenError, ValueError):
    """A layer, hierarchy or run was configured inconsistently."""


class UsageError(SkelgenError, ValueError):
    """An API was called with arguments outside its contract."""


class DomainError(SkelgenError, ValueError):
    """A value fell outside the mathematical domain of an operation."""


class ValidationError(SkelgenError, ValueError):
    """Input data violates a documented invariant."""


class TrainingDiverged(SkelgenError, RuntimeError):
    """A loss became non-finite during training."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class BvhParseError(SkelgenError, ValueError):
    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.column = column
