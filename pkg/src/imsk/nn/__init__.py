from . import checkpoint, gradcheck, layers, optim, tensor
from .tensor import Parameter, Tensor

__all__ = ["tensor", "layers", "optim", "gradcheck", "checkpoint", "Tensor", "Parameter"]
