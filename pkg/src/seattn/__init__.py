"""Single-stage attentional text-to-image GAN at desk scale.

Built on a small reverse-mode autodiff engine over numpy (``seattn.tensor``).
"""

from .errors import ConfigurationError, ContractError, DimensionError, NumericError, SecondOrderError
from .tensor import Tensor, backward, grad, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ContractError", "DimensionError", "NumericError", "SecondOrderError",
    "Tensor", "backward", "grad", "no_grad",
]
