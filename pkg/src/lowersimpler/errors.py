"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where only finite values are legal."""


class ContractError(RuntimeError):
    """A caller violated an operation precondition."""


class ConfigError(ValueError):
    """A cell, model, or run configuration is invalid."""


class SpecError(ConfigError):
    """A model specification cannot be assembled as described."""


class EmptyBatchError(ValueError):
    """A loss or metric was asked to reduce over zero positions."""


class DataError(ValueError):
    """Input data is malformed or inconsistent with its vocabulary."""
