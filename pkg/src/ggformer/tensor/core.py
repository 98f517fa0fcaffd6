"""Tensor, Parameter, evaluation traces and reverse-mode accumulation."""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, StateError

_grad_enabled = contextvars.ContextVar("gg_grad_enabled", default=True)
_active_trace = contextvars.ContextVar("gg_active_trace", default=None)
_scope = contextvars.ContextVar("gg_scope", default=())


class Tensor:
    """Dense row-major array plus the closure that routes gradients to its inputs.

    Non-parameter tensors are treated as immutable once built.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(s < 1 for s in arr.shape):
            raise DimensionError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = False
        self._parents = ()
        self._backward = None

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

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """Learnable leaf. ``grad`` has the value's shape and starts at zero."""

    __slots__ = ("grad", "name")

    def __init__(self, data, dtype=None, name=None):
        super().__init__(data, dtype=dtype)
        self.data = np.array(self.data, copy=True)
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def value(self):
        return self.data

    @property
    def gradient(self):
        return self.grad

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- grad mode ---------------------------------------------------------------

@contextlib.contextmanager
def no_grad():
    """Skip graph construction; forward values are unchanged."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled():
    return _grad_enabled.get()


# -- traces --------------------------------------------------------------------

@dataclass
class OpRecord:
    scope: str
    op: str
    shapes: tuple
    macs: int
    elementwise: int


@dataclass
class Trace:
    """Executed-primitive log used for MAC accounting."""

    records: list = field(default_factory=list)
    # id(Parameter) -> (scope of first use, element count)
    params: dict = field(default_factory=dict)

    @property
    def macs(self):
        return sum(r.macs for r in self.records)

    @property
    def elementwise(self):
        return sum(r.elementwise for r in self.records)

    @property
    def n_params(self):
        return sum(n for _, n in self.params.values())


@contextlib.contextmanager
def record():
    """Collect every primitive executed inside the block into a :class:`Trace`."""
    tr = Trace()
    token = _active_trace.set(tr)
    try:
        yield tr
    finally:
        _active_trace.reset(token)


@contextlib.contextmanager
def scope(name):
    """Prefix trace records with ``name`` (dotted when nested)."""
    token = _scope.set(_scope.get() + (str(name),))
    try:
        yield
    finally:
        _scope.reset(token)


def current_scope():
    return ".".join(_scope.get())


def _log(op, inputs, macs=0, elementwise=0):
    tr = _active_trace.get()
    if tr is None:
        return
    where = current_scope()
    tr.records.append(
        OpRecord(where, op, tuple(t.shape for t in inputs), int(macs), int(elementwise))
    )
    for t in inputs:
        if isinstance(t, Parameter) and id(t) not in tr.params:
            tr.params[id(t)] = (where, t.size)


def make_result(data, parents, backward, op, macs=0, elementwise=0):
    """Wrap ``data`` as the output of primitive ``op`` applied to ``parents``.

    ``backward(g)`` must return one gradient array (or None) per parent.
    """
    _log(op, parents, macs, elementwise)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- reverse mode --------------------------------------------------------------

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
    return order[::-1]


def backward(loss):
    """Accumulate d(loss)/d(param) into ``param.grad`` for every reachable Parameter."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if isinstance(loss, Parameter):
        loss.grad += 1.0
        return
    if loss._backward is None:
        raise StateError("backward called without a recorded forward pass")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in _topo_order(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
