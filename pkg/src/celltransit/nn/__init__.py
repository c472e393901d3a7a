"""Minimal reverse-mode autodiff engine.

Tensors carry values plus gradient buffers; operations executed inside an
active Tape record backward closures that are replayed exactly once, in
reverse order, by ``Tape.backward``.  Only the layer set needed by the
model zoo is provided: linear, 2D convolution, batch normalization, ReLU,
max pooling, global average pooling, concatenation, residual addition,
and fused softmax cross-entropy.
"""

from celltransit.nn.tensor import Tape, Tensor, no_tape
from celltransit.nn.ops import (
    add,
    batchnorm,
    concat,
    conv2d,
    flatten,
    global_avg_pool,
    linear,
    maxpool2d,
    relu,
    softmax_cross_entropy,
)
from celltransit.nn.layers import (
    BatchNorm,
    Conv2d,
    Linear,
    Module,
    RunningStats,
)
from celltransit.nn.optim import ParamStore, adam_step, sgd_step
from celltransit.nn.gradcheck import GradCheckReport, gradient_check
from celltransit.nn.checkpoint import load_weights, save_weights

__all__ = [
    "Tensor", "Tape", "no_tape",
    "linear", "conv2d", "batchnorm", "relu", "maxpool2d",
    "global_avg_pool", "concat", "add", "flatten", "softmax_cross_entropy",
    "Module", "Linear", "Conv2d", "BatchNorm", "RunningStats",
    "ParamStore", "sgd_step", "adam_step",
    "gradient_check", "GradCheckReport",
    "save_weights", "load_weights",
]
