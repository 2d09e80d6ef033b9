"""Tensor type and the reverse-mode engine.

Graphs are recorded eagerly. Every backward rule is written with tensor ops,
so running the engine with ``create_graph=True`` records the backward pass
itself and supports gradient-of-gradient terms (R1, path length).
"""
from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

from ..errors import UsageError

_ids = itertools.count()
_local = threading.local()
_default_dtype = np.float32


def is_grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def grad_mode(enabled):
    prev = is_grad_enabled()
    _local.grad_enabled = bool(enabled)
    try:
        yield
    finally:
        _local.grad_enabled = prev


def no_grad():
    return grad_mode(False)


def enable_grad():
    return grad_mode(True)


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    _default_dtype = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def _to_array(data, dtype=None):
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return data.astype(dtype, copy=False)
        if data.dtype.kind == "f":
            return data
        return data.astype(_default_dtype)
    return np.asarray(data, dtype=dtype or _default_dtype)


class Tensor:
    """Dense array participating in the differentiation graph.

    ``grad`` is a plain ndarray, filled by :func:`backward` on leaves (and on
    intermediates that called :meth:`retain_grad`).
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_ctx", "_retain", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _to_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self._ctx = None
        self._retain = False

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
        return self._ctx is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def retain_grad(self):
        self._retain = True
        return self

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    if like is not None and not isinstance(x, np.ndarray):
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def make_result(data, parents, backward_fn):
    """Wrap ``data`` as an op output, recording the graph edge when needed.

    ``backward_fn(g, needs)`` receives the upstream gradient as a Tensor and a
    tuple of flags saying which parents need a gradient; it returns one entry
    per parent (Tensor or None).
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.node_id = next(_ids)
    out._ctx = None
    out._retain = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._ctx = (parents, backward_fn)
    return out


def _collect(roots):
    nodes = {}
    stack = [r for r in roots if r.requires_grad]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        if t._ctx is not None:
            for p in t._ctx[0]:
                if p.requires_grad and p.node_id not in nodes:
                    stack.append(p)
    return nodes


def _run(roots, root_grads, create_graph, targets=None, accumulate_leaves=False):
    nodes = _collect(roots)
    order = sorted(nodes)
    relevant = None
    target_ids = set()
    if targets is not None:
        target_ids = {t.node_id for t in targets}
        relevant = set()
        for nid in order:
            t = nodes[nid]
            if nid in target_ids or (
                t._ctx is not None and any(p.node_id in relevant for p in t._ctx[0])
            ):
                relevant.add(nid)

    grads = {}
    for r, g in zip(roots, root_grads):
        if not r.requires_grad:
            continue
        grads[r.node_id] = g if r.node_id not in grads else grads[r.node_id] + g

    found = {}
    with grad_mode(create_graph):
        for nid in reversed(order):
            g = grads.pop(nid, None)
            if g is None:
                continue
            t = nodes[nid]
            if nid in target_ids:
                found[nid] = g
            if accumulate_leaves and (t._ctx is None or t._retain):
                if t.grad is None:
                    t.grad = np.array(g.data, dtype=t.dtype, copy=True)
                else:
                    t.grad = t.grad + g.data
            if t._ctx is None:
                continue
            parents, fn = t._ctx
            needs = tuple(
                p.requires_grad and (relevant is None or p.node_id in relevant) for p in parents
            )
            if not any(needs):
                continue
            pgs = fn(g, needs)
            for p, need, pg in zip(parents, needs, pgs):
                if not need or pg is None:
                    continue
                prev = grads.get(p.node_id)
                grads[p.node_id] = pg if prev is None else prev + pg
    return found


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if grad is None:
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = Tensor(np.ones_like(loss.data))
    else:
        grad = as_tensor(grad)
    _run([loss], [grad], create_graph=False, accumulate_leaves=True)


def grad(outputs, inputs, grad_outputs=None, create_graph=False):
    """Return d(sum of outputs * grad_outputs)/d(inputs) as tensors.

    Inputs may be intermediate nodes. Unreachable inputs get zero gradients.
    With ``create_graph`` the returned tensors are themselves differentiable.
    """
    single_in = isinstance(inputs, Tensor)
    if isinstance(outputs, Tensor):
        outputs = [outputs]
    if single_in:
        inputs = [inputs]
    if grad_outputs is None:
        grad_outputs = [None] * len(outputs)
    elif isinstance(grad_outputs, Tensor):
        grad_outputs = [grad_outputs]
    gos = []
    for o, go in zip(outputs, grad_outputs):
        if go is None:
            if o.size != 1:
                raise UsageError("grad_outputs required for non-scalar outputs")
            go = Tensor(np.ones_like(o.data))
        gos.append(as_tensor(go))
    found = _run(list(outputs), gos, create_graph=create_graph, targets=list(inputs))
    res = []
    for t in inputs:
        g = found.get(t.node_id)
        res.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return res[0] if single_in else res
