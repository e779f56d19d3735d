"""Float64 tensors, reverse-mode autodiff and Adam."""

import numpy as np

from . import functional
from .functional import (
    DimensionError,
    PROB_FLOOR,
    batch_norm,
    concat,
    conv2d_same,
    cross_entropy,
    cross_entropy_logits,
    linear,
    log_softmax,
    matmul,
    relu,
    softmax,
    tanh,
)
from .optim import Adam, AdamState, NumericError, adam_step
from .tensor import Tensor, as_tensor, grad, is_grad_enabled, no_grad


def input_grad(loss_fn, x, *args):
    """Gradient of ``loss_fn(x, *args)`` w.r.t. the input tensor ``x``.

    Only ``x`` receives a gradient: parameters reachable from the loss keep
    their ``.grad`` untouched and nothing is updated.
    """
    if not isinstance(x, Tensor) or not x.requires_grad:
        raise RuntimeError("input_grad needs an input tensor with requires_grad=True")
    loss = loss_fn(x, *args)
    (g,) = grad(loss, [x])
    return g


def finite_difference(fn, x, step=1e-5):
    """Central differences of scalar ``fn`` over every entry of ndarray ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * step)
    return out


__all__ = [
    "Adam", "AdamState", "DimensionError", "NumericError", "PROB_FLOOR", "Tensor",
    "adam_step", "as_tensor", "batch_norm", "concat", "conv2d_same", "cross_entropy",
    "cross_entropy_logits", "finite_difference", "functional", "grad", "input_grad",
    "is_grad_enabled", "linear", "log_softmax", "matmul", "no_grad", "relu", "softmax",
    "tanh",
]
