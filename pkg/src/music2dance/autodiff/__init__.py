from . import tensor as ops
from .nn import Dropout, Embedding, FeedForward, LayerNorm, Linear, Module, parameter
from .optim import Adam, adam_step
from .tensor import Tensor, as_tensor, backward, make_op, no_grad

__all__ = [
    "Adam",
    "Dropout",
    "Embedding",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "Module",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "make_op",
    "no_grad",
    "ops",
    "parameter",
]
