"""Dense float64 tensors with a reverse-mode gradient tape.

Every operation that touches a tensor with ``requires_grad`` records a node
holding its parents and a backward closure. ``Tensor.backward`` accumulates
into leaf ``.grad`` arrays; :func:`grad` returns gradients for chosen inputs
without touching any ``.grad`` field.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

DTYPE = np.float64

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (inference, optimizer updates)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # graph traversal -------------------------------------------------------
    def backward(self, grad_output=None):
        """Accumulate d(self)/d(leaf) into every participating leaf's ``.grad``."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad_output is None:
            if self.data.size != 1:
                raise ValueError("grad_output required for non-scalar backward()")
            grad_output = np.ones_like(self.data)
        grads = _propagate(self, np.asarray(grad_output, dtype=DTYPE), stop=None)
        for node, g in grads.items():
            if node.is_leaf and node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g

    # operator sugar; implementations live in functional ---------------------
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __neg__(self):
        from . import functional as F
        return F.neg(self)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        return F.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _propagate(root, grad_output, stop):
    """Run the tape backwards from ``root``; return {node: grad} for leaves
    (or for the nodes in ``stop`` when given)."""
    grads = {id(root): grad_output}
    nodes = {id(root): root}
    out = {}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if stop is not None and id(node) in stop:
            out[node] = g
            continue
        if node._backward is None:
            if stop is None:
                out[node] = g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            nodes[key] = p
            grads[key] = pg if key not in grads else grads[key] + pg
    return out


def grad(output, inputs):
    """Gradients of scalar ``output`` w.r.t. each tensor in ``inputs``.

    Leaf ``.grad`` fields are left untouched, so model parameters on the same
    tape receive nothing.
    """
    if not output.requires_grad:
        raise RuntimeError("output is not connected to the tape")
    if output.data.size != 1:
        raise ValueError("grad() expects a scalar output")
    stop = {id(t) for t in inputs}
    found = _propagate(output, np.ones_like(output.data), stop)
    by_id = {id(k): v for k, v in found.items()}
    return [by_id.get(id(t), np.zeros_like(t.data)) for t in inputs]
