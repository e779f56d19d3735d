"""Differentiable operations on :class:`Tensor`.

Backward closures receive the upstream gradient and return one gradient per
parent (``None`` for parents that need none).
"""

from __future__ import annotations

import functools

import numpy as np

from .tensor import DTYPE, Tensor, as_tensor

PROB_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise arithmetic ----------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return Tensor._from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape),
                   _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a):
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


# linear algebra --------------------------------------------------------------

def matmul(a, b):
    """Matrix product; leading dims broadcast as in ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dims disagree: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with weight stored as (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# reductions and shape ----------------------------------------------------------

def sum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return Tensor._from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape):
    return Tensor._from_op(np.broadcast_to(a.data, shape).copy(), (a,),
                           lambda g: (_unbroadcast(g, a.shape),))


def getitem(a, index):
    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._from_op(a.data[index], (a,), backward)


def take(a, indices, axis):
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    indices = np.asarray(indices)

    def backward(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, tuple(range(axis, axis + indices.ndim)),
                                              tuple(range(indices.ndim))))
        return (out,)

    return Tensor._from_op(np.take(a.data, indices, axis=axis), (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis),
                           tuple(tensors), backward)




# activations -------------------------------------------------------------------

def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    return Tensor._from_op(out, (x,), lambda g: (g * (out > 0),))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward)


# losses --------------------------------------------------------------------------

def _check_labels(labels, n_rows, n_classes):
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise DimensionError(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f"label out of range [0, {n_classes})")
    return labels.astype(np.intp)


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of ``labels`` under row-normalized ``probs``.

    Probabilities are floored at 1e-12 before the log, so a confident wrong
    row costs about 27.6 nats instead of infinity.
    """
    probs = as_tensor(probs)
    n, c = probs.shape
    labels = _check_labels(labels, n, c)
    rows = np.arange(n)
    picked = probs.data[rows, labels]
    clamped = np.maximum(picked, PROB_FLOOR)
    value = -np.log(clamped).mean()

    def backward(g):
        out = np.zeros_like(probs.data)
        live = picked > PROB_FLOOR
        out[rows, labels] = np.where(live, -1.0 / (n * clamped), 0.0)
        return (out * g,)

    return Tensor._from_op(np.asarray(value), (probs,), backward)


def cross_entropy_logits(logits, labels, reduction="mean"):
    """Cross-entropy from unnormalized scores over the last axis of a 2-d input."""
    logits = as_tensor(logits)
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    logp = log_softmax(logits, axis=-1)
    picked = getitem(logp, (np.arange(n), labels))
    total = sum(picked)
    scale = -1.0 / n if reduction == "mean" else -1.0
    return mul(total, scale)


# convolution / normalization -----------------------------------------------------

@functools.lru_cache(maxsize=32)
def _conv_pairs(h, w, kh, kw):
    """(input position, output position, kernel row, kernel col) for every
    tap of a stride-1 'same' convolution that lands inside the image."""
    pin, pout, ti, tj = [], [], [], []
    for oh in range(h):
        for ow in range(w):
            for i in range(kh):
                for j in range(kw):
                    ih, iw = oh + i - kh // 2, ow + j - kw // 2
                    if 0 <= ih < h and 0 <= iw < w:
                        pin.append(ih * w + iw)
                        pout.append(oh * w + ow)
                        ti.append(i)
                        tj.append(j)
    pin, pout, ti, tj = (np.asarray(a, dtype=np.intp) for a in (pin, pout, ti, tj))
    tap_of_pair = np.zeros((kh * kw, len(pin)))
    tap_of_pair[ti * kw + tj, np.arange(len(pin))] = 1.0
    return pin, pout, ti, tj, tap_of_pair


def conv2d_same(x, weight):
    """Stride-1 convolution with zero 'same' padding, NHWC layout, no bias.

    ``weight`` has shape (kh, kw, c_in, c_out) with odd kernel sides. The
    images here are tiny (2 x n_rx), so the convolution is applied as one
    dense (H*W*c_in, H*W*c_out) operator assembled from the kernel taps.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    n, h, w, c_in = x.shape
    kh, kw, wc_in, c_out = weight.shape
    if wc_in != c_in:
        raise DimensionError(f"conv expects {wc_in} input channels, got {c_in}")
    pin, pout, ti, tj, tap_of_pair = _conv_pairs(h, w, kh, kw)
    op = np.zeros((h * w, c_in, h * w, c_out), dtype=DTYPE)
    op[pin, :, pout, :] = weight.data[ti, tj]
    op = op.reshape(h * w * c_in, h * w * c_out)
    flat = x.data.reshape(n, h * w * c_in)
    out = (flat @ op).reshape(n, h, w, c_out)

    def backward(g):
        g2 = g.reshape(n, h * w * c_out)
        gx = (g2 @ op.T).reshape(x.shape)
        full = (flat.T @ g2).reshape(h * w, c_in, h * w, c_out)
        pairs = full[pin, :, pout, :].reshape(len(pin), c_in * c_out)
        gw = (tap_of_pair @ pairs).reshape(weight.shape)
        return gx, gw

    return Tensor._from_op(out, (x, weight), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel normalization over every axis but the last.

    In training mode batch statistics are used and the running buffers
    (plain ndarrays) are updated in place; otherwise the buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    if training:
        m = x.data.size // x.shape[-1]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data
        if training:
            m = x.data.size // x.shape[-1]
            gx = inv / m * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
        else:
            gx = gxhat * inv
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward)
