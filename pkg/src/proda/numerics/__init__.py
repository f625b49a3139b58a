"""Float64 tensor math with reverse-mode autodiff and a finite-difference oracle."""
from . import autograd, checkpoint
from .autograd import NonFiniteError, ShapeError, Tensor, no_grad
from .gradcheck import GradReport, grad_check, relative_error
from .layers import MLP, Embedding, Linear, Module, Parameter, SelfAttention, scaled_dot_attention
from .optim import RMSProp

__all__ = [
    "autograd", "checkpoint", "Tensor", "no_grad", "NonFiniteError", "ShapeError",
    "GradReport", "grad_check", "relative_error", "Module", "Parameter", "Linear", "MLP",
    "Embedding", "SelfAttention", "scaled_dot_attention", "RMSProp",
]
