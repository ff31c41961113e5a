"""Reverse-mode autodiff, parameters, optimizer and checkpoints."""

from . import kernels
from .checkpoint import CheckpointError, load_into, save
from .optim import AdamState, adam_step, clip_global_norm, global_norm
from .store import LSTM, Embedding, Linear, ParameterStore
from .tensor import (
    ShapeError,
    Value,
    concat,
    dropout,
    embedding,
    exp,
    log,
    log_softmax,
    lstm_cell,
    matmul,
    mean,
    mse,
    nll,
    no_grad,
    pick,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    stack,
    tanh,
    vsum,
)

__all__ = [
    "AdamState", "CheckpointError", "Embedding", "LSTM", "Linear", "ParameterStore",
    "ShapeError", "Value", "adam_step", "clip_global_norm", "concat", "dropout",
    "embedding", "exp", "global_norm", "kernels", "load_into", "log", "log_softmax",
    "lstm_cell", "matmul", "mean", "mse", "nll", "no_grad", "pick", "relu", "reshape",
    "save", "scale", "sigmoid", "softmax", "stack", "tanh", "vsum",
]
