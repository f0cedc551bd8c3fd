"""Reverse-mode autodiff over float64 numpy arrays.

Every op is a (forward, backward) pair of pure array functions. Inside a
``with Tape() as tape:`` block each op result is recorded on the tape in
creation order, which is already a valid topological order for the reverse
sweep. Outside a tape ops run eagerly with no bookkeeping; rollout collection
relies on that fast path.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from ..errors import DimensionError, EmptySupportError, NonFiniteError, UsageError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "fortattack_active_tape", default=None
)


class Tensor:
    """A float64 array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data: Any, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(frozen=True)
class OpDef:
    name: str
    forward: Callable[..., np.ndarray]
    backward: Callable[..., tuple]


@dataclass
class Node:
    out: Tensor
    op: OpDef
    parents: tuple[Tensor, ...]
    kwargs: dict


class Tape:
    """Records ops executed while it is the active tape."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._ids: set[int] = set()
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._ids

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, node: Node) -> None:
        self.nodes.append(node)
        self._ids.add(id(node.out))

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded value from the leaves, in order."""
        values: dict[int, np.ndarray] = {}
        out = []
        for node in self.nodes:
            args = [values.get(id(p), p.data) for p in node.parents]
            v = node.op.forward(*args, **node.kwargs)
            values[id(node.out)] = v
            out.append(v)
        return out


def _apply(op: OpDef, *parents: Tensor, **kwargs) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        data = op.forward(*(p.data for p in parents), **kwargs)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op.name} produced a non-finite value")
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        out.requires_grad = any(p.requires_grad for p in parents)
        tape._record(Node(out, op, parents, kwargs))
    return out


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] = ()) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. each of ``params``.

    Parameters the loss does not depend on get a zero array.
    """
    if loss not in tape:
        raise UsageError("loss was not produced on this tape")
    if loss.data.size != 1:
        raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None or not node.out.requires_grad:
            continue
        pgs = node.op.backward(g, node.out.data, *(p.data for p in node.parents), **node.kwargs)
        for p, pg in zip(node.parents, pgs):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    return [np.array(grads.get(id(p), np.zeros_like(p.data)), dtype=np.float64).reshape(p.shape)
            for p in params]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _op(name, forward, backward_fn) -> OpDef:
    return OpDef(name, forward, backward_fn)


# elementwise arithmetic

_ADD = _op("add", lambda a, b: a + b,
           lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
_SUB = _op("sub", lambda a, b: a - b,
           lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
_MUL = _op("mul", lambda a, b: a * b,
           lambda g, o, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))
_DIV = _op("div", lambda a, b: a / b,
           lambda g, o, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * o / b, b.shape)))
_NEG = _op("neg", lambda a: -a, lambda g, o, a: (-g,))
_SQUARE = _op("square", lambda a: a * a, lambda g, o, a: (2.0 * a * g,))
_MIN = _op("minimum", np.minimum,
           lambda g, o, a, b: (_unbroadcast(g * (a <= b), a.shape),
                               _unbroadcast(g * (a > b), b.shape)))


def add(a, b) -> Tensor: return _apply(_ADD, as_tensor(a), as_tensor(b))
def sub(a, b) -> Tensor: return _apply(_SUB, as_tensor(a), as_tensor(b))
def mul(a, b) -> Tensor: return _apply(_MUL, as_tensor(a), as_tensor(b))
def div(a, b) -> Tensor: return _apply(_DIV, as_tensor(a), as_tensor(b))
def neg(a) -> Tensor: return _apply(_NEG, as_tensor(a))
def square(a) -> Tensor: return _apply(_SQUARE, as_tensor(a))
def minimum(a, b) -> Tensor: return _apply(_MIN, as_tensor(a), as_tensor(b))


def _clip_fwd(a, lo, hi):
    return np.clip(a, lo, hi)


_CLIP = _op("clip", _clip_fwd, lambda g, o, a, lo, hi: (g * ((a >= lo) & (a <= hi)),))


def clip(a, lo: float, hi: float) -> Tensor:
    return _apply(_CLIP, as_tensor(a), lo=lo, hi=hi)


# nonlinearities

def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _log_sigmoid(x):
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


_TANH = _op("tanh", np.tanh, lambda g, o, a: (g * (1.0 - o * o),))
_EXP = _op("exp", np.exp, lambda g, o, a: (g * o,))
_LOG = _op("log", np.log, lambda g, o, a: (g / a,))
_SIGMOID = _op("sigmoid", _sigmoid, lambda g, o, a: (g * o * (1.0 - o),))
_LOG_SIGMOID = _op("log_sigmoid", _log_sigmoid, lambda g, o, a: (g * (1.0 - _sigmoid(a)),))


def tanh(a) -> Tensor: return _apply(_TANH, as_tensor(a))
def exp(a) -> Tensor: return _apply(_EXP, as_tensor(a))
def log(a) -> Tensor: return _apply(_LOG, as_tensor(a))
def sigmoid(a) -> Tensor: return _apply(_SIGMOID, as_tensor(a))
def log_sigmoid(a) -> Tensor: return _apply(_LOG_SIGMOID, as_tensor(a))


# reductions and shape ops

def _sum_bwd(g, o, a, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape),)


_SUM = _op("sum", lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims), _sum_bwd)
_RESHAPE = _op("reshape", lambda a, shape: np.reshape(a, shape),
               lambda g, o, a, shape: (np.reshape(g, a.shape),))
_SWAP = _op("swap_last", lambda a: np.swapaxes(a, -1, -2),
            lambda g, o, a: (np.swapaxes(g, -1, -2),))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    return _apply(_SUM, as_tensor(a), axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(tsum(a, axis, keepdims), float(n))


def reshape(a, shape) -> Tensor:
    return _apply(_RESHAPE, as_tensor(a), shape=tuple(shape))


def swap_last(a) -> Tensor:
    return _apply(_SWAP, as_tensor(a))


def _getitem_bwd(g, o, a, idx):
    out = np.zeros_like(a)
    np.add.at(out, idx, g)
    return (out,)


_GETITEM = _op("getitem", lambda a, idx: a[idx], _getitem_bwd)


def getitem(a, idx) -> Tensor:
    return _apply(_GETITEM, as_tensor(a), idx=idx)


def _take_bwd(g, o, a, indices, axis):
    out = np.zeros_like(a)
    np.put_along_axis(out, indices, g, axis=axis)
    return (out,)


_TAKE = _op("take_along", lambda a, indices, axis: np.take_along_axis(a, indices, axis=axis),
            _take_bwd)


def take_along(a, indices: np.ndarray, axis: int = -1) -> Tensor:
    """Gather one entry per row; ``indices`` must have size 1 along ``axis``."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.shape[axis] != 1:
        raise DimensionError("take_along expects a single index per row")
    return _apply(_TAKE, as_tensor(a), indices=indices, axis=axis)


def _concat_fwd(*arrays, axis):
    return np.concatenate(arrays, axis=axis)


def _concat_bwd(g, o, *arrays, axis):
    cuts = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


_CONCAT = _op("concat", _concat_fwd, _concat_bwd)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return _apply(_CONCAT, *(as_tensor(t) for t in tensors), axis=axis)


# linear algebra

def _matmul_bwd(g, o, a, b):
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


_MATMUL = _op("matmul", np.matmul, _matmul_bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul mismatch {a.shape} @ {b.shape}")
    return _apply(_MATMUL, a, b)


def _linear_fwd(x, w, b):
    return x @ w.T + b


def _linear_bwd(g, o, x, w, b):
    g2 = g.reshape(-1, g.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return g @ w, g2.T @ x2, g2.sum(axis=0)


_LINEAR = _op("linear", _linear_fwd, _linear_bwd)


def linear(x, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"input width {x.shape[-1]} != layer in-dim {weight.shape[1]}")
    return _apply(_LINEAR, x, weight, bias)


# masked normalizations

def _shifted(x, mask, axis):
    if x.shape[axis] == 0:
        return x
    mx = np.max(np.where(mask, x, -np.inf), axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.where(mask, x - mx, -np.inf)


def _softmax_fwd(x, mask, axis, allow_empty):
    z = np.exp(_shifted(x, mask, axis))
    s = z.sum(axis=axis, keepdims=True)
    if not allow_empty and (s == 0).any():
        raise EmptySupportError("softmax over an empty (fully masked) set")
    return z / np.where(s == 0, 1.0, s)


def _softmax_bwd(g, o, x, mask, axis, allow_empty):
    return (o * (g - np.sum(g * o, axis=axis, keepdims=True)),)


_SOFTMAX = _op("masked_softmax", _softmax_fwd, _softmax_bwd)


def _log_softmax_fwd(x, mask, axis):
    sh = _shifted(x, mask, axis)
    s = np.exp(sh).sum(axis=axis, keepdims=True)
    if (s == 0).any():
        raise EmptySupportError("log_softmax over an empty (fully masked) set")
    return np.where(mask, np.where(mask, sh, 0.0) - np.log(s), 0.0)


def _log_softmax_bwd(g, o, x, mask, axis):
    p = np.where(mask, np.exp(o), 0.0)
    gm = np.where(mask, g, 0.0)
    return (np.where(mask, gm - p * gm.sum(axis=axis, keepdims=True), 0.0),)


_LOG_SOFTMAX = _op("masked_log_softmax", _log_softmax_fwd, _log_softmax_bwd)


def _full_mask(x: Tensor, mask) -> np.ndarray:
    if mask is None:
        return np.ones(x.shape, dtype=bool)
    return np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)


def masked_softmax(x, mask=None, axis: int = -1, allow_empty: bool = False) -> Tensor:
    """Softmax along ``axis`` over entries where ``mask`` is true.

    Masked entries come out exactly 0. With ``allow_empty`` a fully masked
    slice yields all zeros instead of raising.
    """
    x = as_tensor(x)
    return _apply(_SOFTMAX, x, mask=_full_mask(x, mask), axis=axis, allow_empty=allow_empty)


def log_softmax(x, mask=None, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    return _apply(_LOG_SOFTMAX, x, mask=_full_mask(x, mask), axis=axis)


def softmax(logits, mask=None) -> np.ndarray:
    """Probability vector over the unmasked entries of ``logits``."""
    return masked_softmax(logits, mask).data
