"""Small dense autodiff engine, segmentation network and optimizer."""

from .checkpoint import load_checkpoint, save_checkpoint
from .net import NetConfig, ParamStore, backward, forward, init_params
from .optim import poly_lr, sgd_step
from .tensor import Tensor, constant, grad, leaf, make

__all__ = [
    "NetConfig",
    "ParamStore",
    "Tensor",
    "backward",
    "constant",
    "forward",
    "grad",
    "init_params",
    "leaf",
    "load_checkpoint",
    "make",
    "poly_lr",
    "save_checkpoint",
    "sgd_step",
]
