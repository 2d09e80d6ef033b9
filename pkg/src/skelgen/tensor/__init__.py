"""Reverse-mode differentiation engine."""
from . import ops
from .conv import conv3d, conv3d_transposed, conv3d_weight, transposed_out_shape
from .core import (
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    enable_grad,
    get_default_dtype,
    grad,
    grad_mode,
    is_grad_enabled,
    make_result,
    no_grad,
    set_default_dtype,
)
from .gradcheck import finite_diff_check
from .ops import (
    absolute,
    add,
    broadcast_to,
    clamp_min,
    concat,
    cumsum,
    div,
    exp,
    flip,
    getitem,
    l2_norm,
    leaky_relu,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    power,
    reshape,
    rsqrt,
    scale,
    sigmoid,
    softplus,
    sqrt,
    square,
    stack,
    sub,
    sum,
    sum_to,
    swapaxes,
    transpose,
    where,
)
from .parameter import Parameter
