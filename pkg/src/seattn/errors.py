"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A layer or model was configured with impossible extents."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class NumericError(ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class SecondOrderError(RuntimeError):
    """create_graph was requested through an op without a differentiable backward."""
