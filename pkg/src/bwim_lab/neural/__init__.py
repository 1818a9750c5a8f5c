from .layers import bce_loss, conv1d_causal, conv1d_pointwise, dense_sigmoid
from .optim import ParameterStore, adam_step
from .tensor import Tensor, parameter

__all__ = [
    "Tensor",
    "parameter",
    "ParameterStore",
    "adam_step",
    "bce_loss",
    "conv1d_causal",
    "conv1d_pointwise",
    "dense_sigmoid",
]
