"""Minimal differentiable-operation layer used by the fusion and flow models."""

from . import tensor as ops
from .gradcheck import GradCheckReport, grad_check
from .modules import Conv1d, LayerNorm, Linear, Module, sinusoidal_embedding
from .optim import ParamStore, adamw_step
from .rng import make_rng
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "Conv1d",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "Module",
    "ParamStore",
    "Parameter",
    "Tensor",
    "adamw_step",
    "grad_check",
    "make_rng",
    "no_grad",
    "ops",
    "sinusoidal_embedding",
]
