"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one operand requires a gradient.  Outside a tape everything evaluates
eagerly and nothing is recorded, which is how evaluation code runs.

    with Tape() as tape:
        loss = (x * x).sum()
    grads = tape.backward(loss)
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import DimensionError, DomainError, NumericError

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("out", "parents", "rule", "op")

    def __init__(self, out, parents, rule, op):
        self.out = out
        self.parents = parents
        self.rule = rule
        self.op = op


class Tape:
    """Ordered record of primitive ops; operands always precede their consumers."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._outputs: set[int] = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, rule, op):
        self.nodes.append(_Node(out, parents, rule, op))
        self._outputs.add(id(out))

    def backward(self, loss):
        return backward(self, loss)


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError(f"tensor {name or ''} contains non-finite values".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        return t

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Tensors are hashed by identity so they can key gradient dicts.
    __hash__ = object.__hash__

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
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t):
    raise DomainError(f"expected a scalar tensor, got shape {t.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _op(out, parents, rule, op):
    if not np.isfinite(out).all():
        raise NumericError(f"{op} produced non-finite values")
    t = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        t.requires_grad = True
        tape.record(t, parents, rule, op)
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def rule(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(g, sb) if needs[1] else None)

    return _op(a.data + b.data, (a, b), rule, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def rule(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(-g, sb) if needs[1] else None)

    return _op(a.data - b.data, (a, b), rule, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def rule(g, needs):
        return (_unbroadcast(g * bd, ad.shape) if needs[0] else None,
                _unbroadcast(g * ad, bd.shape) if needs[1] else None)

    return _op(ad * bd, (a, b), rule, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise NumericError("division by zero")
    out = ad / bd

    def rule(g, needs):
        return (_unbroadcast(g / bd, ad.shape) if needs[0] else None,
                _unbroadcast(-g * out / bd, bd.shape) if needs[1] else None)

    return _op(out, (a, b), rule, "div")


def neg(a):
    a = as_tensor(a)
    return _op(-a.data, (a,), lambda g, needs: (-g,), "neg")


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    ad = a.data
    return _op(ad ** p, (a,), lambda g, needs: (g * p * ad ** (p - 1.0),), "power")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _op(out, (a,), lambda g, needs: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    ad = a.data
    return _op(np.log(ad), (a,), lambda g, needs: (g / ad,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _op(out, (a,), lambda g, needs: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _op(out, (a,), lambda g, needs: (g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    """log(1 + e^x), evaluated without overflow."""
    a = as_tensor(a)
    ad = a.data
    return _op(np.logaddexp(0.0, ad), (a,), lambda g, needs: (g * _sigmoid(ad),), "softplus")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _op(np.where(mask, a.data, 0.0), (a,), lambda g, needs: (g * mask,), "relu")


def cos(a):
    a = as_tensor(a)
    ad = a.data
    return _op(np.cos(ad), (a,), lambda g, needs: (-g * np.sin(ad),), "cos")


def sin(a):
    a = as_tensor(a)
    ad = a.data
    return _op(np.sin(ad), (a,), lambda g, needs: (g * np.cos(ad),), "sin")


# -- linear algebra / shape -------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def rule(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if needs[1]:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _op(ad @ bd, (a, b), rule, "matmul")


def transpose(a):
    a = as_tensor(a)
    return _op(np.swapaxes(a.data, -1, -2), (a,),
               lambda g, needs: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _op(a.data.reshape(shape), (a,), lambda g, needs: (g.reshape(old),), "reshape")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def rule(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), rule, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def rule(g, needs):
        return tuple(np.split(g, splits, axis=axis))

    return _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), rule, "concat")


def getitem(a, key):
    a = as_tensor(a)
    shape = a.shape

    def rule(g, needs):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _op(np.asarray(a.data[key]), (a,), rule, "getitem")


def take(a, idx):
    """Gather rows ``a[idx]`` along the first axis (idx may be any int array)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def rule(g, needs):
        full = np.zeros(shape)
        np.add.at(full, idx.reshape(-1), g.reshape((-1,) + shape[1:]))
        return (full,)

    return _op(a.data[idx], (a,), rule, "take")


# -- softmax ----------------------------------------------------------------

def masked_softmax(logits, mask=None, axis=-1):
    """Softmax along ``axis``; masked-out entries get probability 0.

    A slice whose entries are all masked yields all zeros instead of NaN.
    """
    logits = as_tensor(logits)
    x = logits.data
    if mask is None:
        m = np.max(x, axis=axis, keepdims=True)
        e = np.exp(x - m)
        out = e / np.sum(e, axis=axis, keepdims=True)
    else:
        mask = np.asarray(mask, dtype=bool)
        xm = np.where(mask, x, -np.inf)
        m = np.max(xm, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(mask, np.exp(np.where(mask, x - m, 0.0)), 0.0)
        s = np.sum(e, axis=axis, keepdims=True)
        out = e / np.where(s > 0, s, 1.0)

    def rule(g, needs):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _op(out, (logits,), rule, "softmax")


def softmax(logits):
    """Max-shifted softmax of a non-empty logit vector."""
    logits = as_tensor(logits)
    if logits.size == 0:
        raise DomainError("softmax of an empty vector")
    return masked_softmax(logits, None, axis=-1)


# -- differentiation --------------------------------------------------------

def backward(tape, loss):
    """Reverse sweep over ``tape`` from scalar ``loss``.

    Sets ``.grad`` on every leaf tensor that requires a gradient and returns
    ``{leaf: grad}`` in first-use order.  Leaves the loss does not depend on
    get zero gradients.
    """
    if loss.size != 1:
        raise DomainError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._outputs:
        raise DomainError("loss was not produced on this tape")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        needs = tuple(p.requires_grad for p in node.parents)
        for p, gp, need in zip(node.parents, node.rule(g, needs), needs):
            if not need:
                continue
            key = id(p)
            prev = grads.get(key)
            grads[key] = gp if prev is None else prev + gp

    leaves = {}
    for node in tape.nodes:
        for p in node.parents:
            if p.requires_grad and id(p) not in tape._outputs and p not in leaves:
                g = grads.get(id(p))
                g = np.zeros_like(p.data) if g is None else np.array(np.broadcast_to(g, p.shape))
                p.grad = g
                leaves[p] = g
    return leaves


def finite_diff_grad(f, x, step=1e-4):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not step > 0:
        raise DomainError("step must be positive")
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = _scalar(f(x))
        flat[i] = orig - step
        fm = _scalar(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def _scalar(v):
    if isinstance(v, Tensor):
        v = v.data
    return float(np.asarray(v).reshape(-1)[0]) if np.size(v) == 1 else _not_scalar(Tensor(v))
