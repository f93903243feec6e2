"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class FormatError(ValueError):
    """A serialized artifact is malformed; message names the byte offset."""


class ContractError(RuntimeError):
    """An operation was invoked outside its stated precondition."""


class MissionLookupError(KeyError):
    """An embedding file does not cover a required mission string."""
