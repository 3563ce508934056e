"""Tensor type and reverse-mode accumulation."""

from __future__ import annotations

import contextlib

import numpy as np

_state = {"dtype": np.float32, "grad_enabled": True}


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype):
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64")
    _state["dtype"] = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (float64 for gradient checks)."""
    old = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


def grad_enabled():
    return _state["grad_enabled"]


class Tensor:
    """An n-d array with an optional link to the operation that produced it.

    ``grad`` is only kept on leaf tensors that require gradients. Calling
    :func:`backward` twice without zeroing accumulates into it.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(get_default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # arithmetic sugar, defined in ops
    def __add__(self, other):
        from mr2xray.gradcore import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from mr2xray.gradcore import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from mr2xray.gradcore import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from mr2xray.gradcore import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from mr2xray.gradcore import ops
        return ops.mul(self, -1.0)


def tensor(data, requires_grad=False, name=None):
    """Create a leaf tensor in the current default dtype."""
    if isinstance(data, Tensor):
        data = data.data
    return Tensor(np.array(data, dtype=get_default_dtype()), requires_grad=requires_grad, name=name)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_default_dtype()))


def make_result(data, parents, backward_fn):
    """Wrap an op output, recording the graph edge only when needed."""
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)
    return Tensor(data)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
