"""Minimal float32 tensor math with a reverse-mode tape."""

from .tensor import (
    Tape,
    TapeError,
    ShapeError,
    Tensor,
    active_tape,
    add,
    affine,
    as_tensor,
    backward,
    columns,
    concat,
    conv2d,
    conv_output_size,
    custom,
    default_dtype,
    detach,
    flatten,
    matmul,
    mean,
    mse,
    mul,
    neg,
    precision,
    relu,
    reshape,
    sigmoid,
    spike,
    sub,
    sum_all,
    tanh,
    wrap_angle,
)
from .params import GradientMissing, ParamStore, adam_step, clip_grad_norm, kaiming, uniform_init
from .layers import add_gru_params, gru_cell, mlp_forward
from .checkpoint import CheckpointError, CheckpointMismatch, load as load_checkpoint, save as save_checkpoint

forward_affine = affine
forward_conv2d = conv2d
