"""Tensor primitives, layers, gradient checking, checkpoints and the optimizer."""

from castmm.nn.checkpoint import load_checkpoint, load_into, save_checkpoint
from castmm.nn.core import (
    ShapeError,
    activation,
    add,
    backward,
    concat_last_dim,
    cross_entropy_masked,
    layer_norm,
    mae,
    matmul,
    resolve_dtype,
    scale,
    softmax_rows,
    zero_grads,
)
from castmm.nn.gradcheck import finite_diff_check
from castmm.nn.layers import MLP, Embedding, LayerNorm, Linear, init_parameters
from castmm.nn.optim import AdamW
