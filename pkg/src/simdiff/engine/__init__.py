from . import ops
from .tensor import Tensor, as_tensor, default_dtype, precision

__all__ = ["Tensor", "as_tensor", "default_dtype", "ops", "precision"]
