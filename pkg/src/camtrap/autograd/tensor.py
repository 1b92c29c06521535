"""Tensor type and the reverse-mode gradient engine."""
from contextlib import contextmanager

import numpy as np

DEFAULT_DTYPE = np.float32

# op name -> factor applied to the upstream gradient; test hook only
_CORRUPTED = {}
_RECORDING = [True]


class Tensor:
    """N-dimensional array that can take part in a recorded autodiff graph.

    Leaf tensors with ``requires_grad`` receive ``.grad`` on ``backward``;
    intermediate results only carry gradients transiently.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def dump(self, precision=4):
        """Text grid of the values, one row per line (last axis across)."""
        arr = self.data.reshape(-1, self.shape[-1]) if self.ndim > 1 else self.data[None, :]
        fmt = f"{{:.{precision}f}}"
        return "\n".join(" ".join(fmt.format(v) for v in row) for row in arr)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def make_result(data, parents, backward_fn, op):
    """Wrap an op's output, recording the graph edge when any input needs grad."""
    out = Tensor(data, dtype=data.dtype)
    if _RECORDING[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topo_order(root):
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


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf needing it."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node.op in _CORRUPTED:
            g = g * _CORRUPTED[node.op]
        needs = tuple(p.requires_grad for p in node._parents)
        for parent, pg in zip(node._parents, node._backward(g, needs)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


@contextmanager
def no_grad():
    """Disable graph recording (inference, feature extraction)."""
    prev = _RECORDING[0]
    _RECORDING[0] = False
    try:
        yield
    finally:
        _RECORDING[0] = prev


@contextmanager
def corrupt_backward(op, factor=1.5):
    """Scale the gradient flowing through every ``op`` node (negative control for checks)."""
    _CORRUPTED[op] = factor
    try:
        yield
    finally:
        _CORRUPTED.pop(op, None)
