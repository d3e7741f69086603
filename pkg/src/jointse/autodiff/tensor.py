"""Dense tensors recorded on a dynamic reverse-mode tape.

Every primitive produces a new :class:`Tensor` holding a reference to its
parents and a closure mapping the output cotangent to parent cotangents.
:func:`grad` walks that graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import InvalidInputError, InvalidStateError, NumericError

_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def get_default_dtype():
    return _get("dtype", np.float64)


def set_default_dtype(dtype):
    _state.dtype = np.dtype(dtype).type


def is_grad_enabled():
    return _get("grad_enabled", True)


def is_debug():
    return _get("debug", False)


def set_debug(flag):
    """Enable finite-value checks on every forward value and Adam gradient."""
    _state.debug = bool(flag)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def debug_mode(flag=True):
    prev = is_debug()
    _state.debug = flag
    try:
        yield
    finally:
        _state.debug = prev


@contextlib.contextmanager
def default_dtype(dtype):
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """An n-d float array that may participate in differentiation."""

    __array_priority__ = 100

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(get_default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

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
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad_output=None):
        backward(self, grad_output)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return len(self.data)

    # operators are bound in ops.py to avoid a circular import


class Parameter(Tensor):
    """A leaf tensor owned by a module and updated by an optimizer."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=get_default_dtype()), requires_grad=True, name=name)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(dtype or get_default_dtype())
    return Tensor(arr)


def make_node(data, parents, backward_fn):
    """Wrap a forward value and register it on the tape.

    ``backward_fn(g)`` must return one cotangent (or None) per parent.
    """
    if is_debug() and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value in forward pass")
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _toposort(root):
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
    return order[::-1]


def _propagate(root, grad_output):
    if not isinstance(root, Tensor) or not root.requires_grad:
        raise InvalidStateError("backward called on a tensor that is not on the tape")
    if grad_output is None:
        if root.data.size != 1:
            raise InvalidInputError("grad_output is required for non-scalar outputs")
        grad_output = np.ones_like(root.data)
    grads = {id(root): np.asarray(grad_output, dtype=root.data.dtype)}
    for node in _toposort(root):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


def grad(output, inputs, grad_output=None):
    """Return d(output)/d(input) for each input; unreachable inputs get zeros.

    Intermediate (non-leaf) tensors may be requested as well.
    """
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    grads = _propagate(output, grad_output)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        result.append(np.zeros_like(t.data) if g is None else g)
    return result[0] if single else result


def backward(output, grad_output=None):
    """Accumulate gradients into ``.grad`` of every reachable leaf."""
    grads = _propagate(output, grad_output)
    for node in _toposort(output):
        if node.is_leaf and node.requires_grad:
            g = grads.get(id(node))
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
