"""Dense float64 tensors with an explicit reverse-mode gradient tape.

A :class:`Tape` is created per training step, parameters are bound to it with
:meth:`Tape.watch`, and every op whose inputs touch a live tape records a node.
:meth:`Tape.backward` consumes the tape exactly once.

    tape = Tape()
    tape.watch(w)
    loss = sum_(mul(w, w))
    grads = tape.backward(loss)     # {w: 2 * w.data}
"""

from __future__ import annotations

import math
import weakref
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class NumericError(FloatingPointError):
    pass


class MemoryTracker:
    """Live/peak byte counts of tensor buffers created while active."""

    def __init__(self) -> None:
        self.active = False
        self.live = 0
        self.peak = 0

    def _add(self, nbytes: int) -> None:
        self.live += nbytes
        if self.live > self.peak:
            self.peak = self.live

    def _release(self, nbytes: int) -> None:
        self.live -= nbytes


_memory = MemoryTracker()


@contextmanager
def track_memory():
    """Record the peak of live tensor bytes inside the block."""
    _memory.live = 0
    _memory.peak = 0
    _memory.active = True
    try:
        yield _memory
    finally:
        _memory.active = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None
        if _memory.active:
            _track(self)

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(data, dtype=np.float64)
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        if _memory.active:
            _track(t)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tape_node(self) -> "Node | None":
        tape = self._tape
        if tape is None or tape.consumed:
            return None
        return tape._owner.get(id(self))

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return detach(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __radd__(self, other):
        return add(_as_tensor(other, self.shape), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    __hash__ = object.__hash__


def _track(t: Tensor) -> None:
    n = t.data.nbytes
    _memory._add(n)
    weakref.finalize(t, _memory._release, n)


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


class Node:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind: str, inputs: tuple, output: Tensor, backward: Callable):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of ops for one backward pass."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.watched: list[Tensor] = []
        self.consumed = False
        self._owner: dict[int, Node] = {}

    def watch(self, *tensors) -> None:
        for item in tensors:
            group = item if not isinstance(item, Tensor) else (item,)
            for t in group:
                if not t.requires_grad:
                    raise TapeError(f"cannot watch {t!r}: requires_grad is False")
                t._tape = self
                self.watched.append(t)

    def _record(self, node: Node) -> None:
        self.nodes.append(node)
        self._owner[id(node.output)] = node

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Fill ``.grad`` on every watched leaf and return ``{leaf: grad}``.

        Leaves the loss does not depend on get zero gradients.
        """
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward()")
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            needs = tuple(isinstance(x, Tensor) and x._tape is self for x in node.inputs)
            for inp, need, gi in zip(node.inputs, needs, node.backward(g, needs)):
                if not need or gi is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        out: dict[Tensor, np.ndarray] = {}
        for t in self.watched:
            if t in out:
                continue
            g = grads.get(id(t))
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g if t.grad is None else t.grad + g
            out[t] = t.grad
        self.nodes.clear()
        self._owner.clear()
        return out


def _emit(kind: str, inputs: tuple, data: np.ndarray, backward: Callable) -> Tensor:
    out = Tensor._wrap(data)
    for t in inputs:
        tape = t._tape if isinstance(t, Tensor) else None
        if tape is not None and not tape.consumed:
            out.requires_grad = True
            out._tape = tape
            tape._record(Node(kind, inputs, out, backward))
            break
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} must match exactly")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g, n: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("subtract", a, b)
    return _emit("subtract", (a, b), a.data - b.data, lambda g, n: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("elementwise_multiply", a, b)
    ad, bd = a.data, b.data
    return _emit(
        "elementwise_multiply",
        (a, b),
        ad * bd,
        lambda g, n: (g * bd if n[0] else None, g * ad if n[1] else None),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g, n: (g * c,))


def broadcast_add(x: Tensor, b: Tensor) -> Tensor:
    """``x[..., n] + b[n]``: the only broadcasting the library permits."""
    if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"broadcast_add: bias {b.shape} does not match trailing axis of {x.shape}")
    width = b.shape[0]

    def backward(g, n):
        return g, (g.reshape(-1, width).sum(axis=0) if n[1] else None)

    return _emit("broadcast_add", (x, b), x.data + b.data, backward)


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """``x[..., d] * w[...]`` with w broadcast along the trailing axis."""
    if x.shape[:-1] != w.shape:
        raise ShapeError(f"scale_rows: weights {w.shape} do not match leading axes of {x.shape}")
    xd, wd = x.data, w.data

    def backward(g, n):
        gx = g * wd[..., None] if n[0] else None
        gw = np.einsum("...d,...d->...", g, xd) if n[1] else None
        return gx, gw

    return _emit("scale_rows", (x, w), xd * wd[..., None], backward)


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit("sigmoid", (x,), s, lambda g, n: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _emit("relu", (x,), np.where(pos, x.data, 0.0), lambda g, n: (g * pos,))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _emit("exp", (x,), e, lambda g, n: (g * e,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NumericError("log of a non-positive value")
    return _emit("log", (x,), np.log(xd), lambda g, n: (g / xd,))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(
        "softplus",
        (x,),
        np.logaddexp(0.0, xd),
        lambda g, n: (g * 0.5 * (1.0 + np.tanh(0.5 * xd)),),
    )


# ---------------------------------------------------------------- reductions


def _softmax_np(x: np.ndarray, axis: int, temperature: float) -> np.ndarray:
    z = x / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = _softmax_np(x.data, axis, temperature)

    def backward(g, n):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)) / temperature,)

    return _emit("softmax", (x,), s, backward)


def log_softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g, n):
        s = np.exp(out)
        return ((g - s * g.sum(axis=axis, keepdims=True)) / temperature,)

    return _emit("log_softmax", (x,), out, backward)


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape

    def backward(g, n):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", (x,), np.asarray(x.data.sum(axis=axis)), backward)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    shape = x.shape

    def backward(g, n):
        if axis is None:
            return (np.full(shape, float(g.reshape(-1)[0]) / count),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / count,)

    return _emit("mean", (x,), np.asarray(x.data.mean(axis=axis)), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis, then apply ``gamma * xhat + beta``."""
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f"layer_norm: affine params must have shape ({width},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gd = gamma.data

    def backward(g, n):
        gx = ggamma = gbeta = None
        if n[0]:
            gxh = g * gd
            gx = inv_std * (
                gxh
                - gxh.mean(axis=-1, keepdims=True)
                - xhat * (gxh * xhat).mean(axis=-1, keepdims=True)
            )
        if n[1]:
            ggamma = (g * xhat).reshape(-1, width).sum(axis=0)
        if n[2]:
            gbeta = g.reshape(-1, width).sum(axis=0)
        return gx, ggamma, gbeta

    return _emit("layer_norm", (x, gamma, beta), xhat * gd + beta.data, backward)


# ---------------------------------------------------------------- linear algebra


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` or batched ``a[..., m, k] @ b[..., k, n]``.

    A 1-D ``a`` is treated as a single row vector.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 2:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")

    def backward(g, n):
        ga = gb = None
        if ad.ndim == 1:
            if n[0]:
                ga = bd @ g
            if n[1]:
                gb = np.outer(ad, g)
            return ga, gb
        if n[0]:
            ga = g @ _swap(bd)
        if n[1]:
            if bd.ndim == 2:
                k, m = ad.shape[-1], g.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, m)
            else:
                gb = _swap(ad) @ g
        return ga, gb

    return _emit("matmul", (a, b), ad @ bd, backward)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(
        "transpose", (x,), np.transpose(x.data, axes), lambda g, n: (np.transpose(g, inverse),)
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape), lambda g, n: (g.reshape(old),))


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: np.ndarray | None = None,
    weights_out: list | None = None,
) -> Tensor:
    """softmax(q kᵀ / sqrt(dh) + mask) v over the last two axes.

    ``mask`` is additive and must broadcast to the score shape; ``-inf``
    entries receive exactly zero weight. If ``weights_out`` is a list, the
    post-softmax weights are appended to it.
    """
    qd, kd, vd = q.data, k.data, v.data
    if qd.shape[:-2] != kd.shape[:-2] or kd.shape != vd.shape or qd.shape[-1] != kd.shape[-1]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    inv = 1.0 / math.sqrt(qd.shape[-1])
    scores = (qd @ _swap(kd)) * inv
    if mask is not None:
        scores = scores + mask
    w = _softmax_np(scores, -1, 1.0)
    if weights_out is not None:
        weights_out.append(w)

    def backward(g, n):
        gw = g @ _swap(vd)
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True)) * inv
        return (
            gs @ kd if n[0] else None,
            _swap(gs) @ qd if n[1] else None,
            _swap(w) @ g if n[2] else None,
        )

    return _emit("scaled_dot_attention", (q, k, v), w @ vd, backward)


# ---------------------------------------------------------------- indexing


def _scatter_rows(idx: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(idx, weights=values[:, j], minlength=n)
    return out


def gather_rows(table: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        bad = idx[(idx < 0) | (idx >= rows)][0]
        raise IndexError(f"gather_rows: index {bad} out of range for {rows} rows")
    tail = table.shape[1:]

    def backward(g, n):
        flat = g.reshape(idx.size, -1)
        return (_scatter_rows(idx.reshape(-1), flat, rows).reshape((rows,) + tail),)

    return _emit("gather_rows", (table,), table.data[idx], backward)


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x[N, d]`` into ``num_segments`` buckets."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    if x.ndim != 2 or seg.shape != (x.shape[0],):
        raise ShapeError(f"segment_sum: need x[N, d] and ids[N], got {x.shape} and {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise IndexError("segment_sum: segment id out of range")
    return _emit(
        "segment_sum",
        (x,),
        _scatter_rows(seg, x.data, num_segments),
        lambda g, n: (g[seg],),
    )


def slice_(x: Tensor, key) -> Tensor:
    shape = x.shape

    def backward(g, n):
        gx = np.zeros(shape)
        np.add.at(gx, key, g)
        return (gx,)

    return _emit("slice", (x,), np.array(x.data[key]), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax
        ):
            raise ShapeError(f"concat: {t.shape} does not conform to {tensors[0].shape} off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g, n):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit("concat", tensors, np.concatenate([t.data for t in tensors], axis=ax), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.maximum(np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True)), eps)
    y = x.data / norm

    def backward(g, n):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _emit("l2_normalize", (x,), y, backward)


def detach(t: Tensor) -> Tensor:
    """Same values, no gradient: a cut in the graph."""
    return Tensor(t.data.copy(), requires_grad=False)


# ---------------------------------------------------------------- dispatch

OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "subtract": sub,
    "elementwise_multiply": mul,
    "scale": scale,
    "matmul": matmul,
    "gather_rows": gather_rows,
    "segment_sum": segment_sum,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "log": log,
    "exp": exp,
    "softplus": softplus,
    "mean": mean,
    "sum": sum_,
    "layer_norm": layer_norm,
    "scaled_dot_attention": scaled_dot_attention,
    "relu": relu,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "slice": slice_,
    "transpose": transpose,
    "reshape": reshape,
    "broadcast_add": broadcast_add,
    "scale_rows": scale_rows,
    "l2_normalize": l2_normalize,
}


def apply(op_kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Run a catalog op by name, e.g. ``apply("softmax", [x], temperature=0.1)``."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}") from None
    return fn(*inputs, **attrs)


def finite_difference_gradient(
    f: Callable[[Tensor], Tensor | float], x: Tensor, eps: float = 1e-6
) -> np.ndarray:
    """Central-difference estimate of d f / d x, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    flat = x.data.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = _scalar(f(x))
        flat[i] = orig - eps
        lo = _scalar(f(x))
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(x.shape)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)
