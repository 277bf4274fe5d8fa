"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents are incompatible with an operation."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class ContractError(RuntimeError):
    """An API was called outside its preconditions."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class InputError(ValueError):
    """Malformed user data (labels, boxes, files)."""
