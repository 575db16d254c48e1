"""Dense tensors with reverse-mode automatic differentiation.

Every primitive computes its result with numpy, checks it for NaN/Inf, and,
when gradients are enabled and some input requires them, records a closure
that maps the output gradient back to its inputs.  ``backward`` walks the
recorded graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from transferlab.errors import (
    EmptyLoss,
    InvalidArgument,
    NonFiniteError,
    ShapeError,
)

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording a graph (evaluation and decoding)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


class Tensor:
    """An ndarray plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.op: str | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    # operator sugar used by the model code
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _all_finite(arr: np.ndarray) -> bool:
    # cheap reduction first; confirm elementwise only when it trips
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(arr.sum()):
            return True
    return bool(np.isfinite(arr).all())


def _node(op: str, data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if not _all_finite(data):
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.op = op
    needs = _GRAD_ENABLED.get() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = parents if needs else ()
    out._backward = backward if needs else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    flat = b.ndim == 2 and a.ndim > 2
    if flat:
        # one large GEMM instead of a per-batch loop
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                ga = (g2 @ b.data.T).reshape(a.shape)
            if b.requires_grad:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g2
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node("matmul", out, (a, b), backward)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)

    def backward(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _node("add", a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting."""
    _broadcast_check("mul", a, b)

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _node("mul", a.data * b.data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _node("scale", a.data * factor, (a,), lambda g: (g * factor,))


def softmax_row(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    if a.ndim == 0 or a.shape[-1] == 0:
        raise InvalidArgument("softmax_row over an empty axis")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node("softmax_row", y, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean / unit population variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            gh = g * gain.data
            gx = rstd * (
                gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _node("layer_norm", out, (x, gain, bias), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node("relu", a.data * mask, (a,), lambda g: (g * mask,))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; ``ids`` is an integer array of any shape."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.dtype.kind not in "iu":
        raise InvalidArgument("embedding_lookup: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InvalidArgument(f"embedding_lookup: id outside [0, {table.shape[0]})")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _node("embedding_lookup", out, (table,), backward)


def dropout(x: Tensor, keep_prob: float, rng: np.random.Generator | int | None = None,
            training: bool = True) -> Tensor:
    """Inverted dropout.  Identity (same object) in eval mode or at keep_prob 1."""
    if not 0.0 < keep_prob <= 1.0:
        raise InvalidArgument(f"dropout: keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape, dtype=np.float32) < keep_prob).astype(x.dtype) / x.dtype.type(keep_prob)
    return _node("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise InvalidArgument("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        parts = np.split(g, bounds, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _node("concat", out, tuple(tensors), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _node("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from exc
    return _node("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def sum(a: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:  # noqa: A001
    out = np.asarray(a.data.sum(axis=axis))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node("sum", out, (a,), backward)


def cross_entropy_label_smoothed(logits: Tensor, gold, epsilon: float = 0.0, pad_id: int = 0) -> Tensor:
    """Mean label-smoothed cross-entropy over the non-pad rows of ``logits``.

    ``logits`` is (positions, V); ``gold`` holds one id per position.  The
    smoothed target is (1 - epsilon) * onehot(gold) + epsilon / V.
    """
    gold = np.asarray(gold).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != gold.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {gold.shape[0]} gold ids")
    if not 0.0 <= epsilon < 1.0:
        raise InvalidArgument(f"label smoothing must lie in [0, 1), got {epsilon}")
    n_pos, vocab = logits.shape
    valid = gold != pad_id
    count = int(valid.sum())
    if count == 0:
        raise EmptyLoss("every position is padding")
    g_valid = gold[valid]
    if g_valid.min() < 0 or g_valid.max() >= vocab:
        raise InvalidArgument(f"gold id outside [0, {vocab})")

    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(n_pos)
    safe_gold = np.where(valid, gold, 0)
    nll = -logp[rows, safe_gold]
    smooth = -logp.mean(axis=1)
    per_position = (1.0 - epsilon) * nll + epsilon * smooth
    loss = np.asarray(per_position[valid].sum() / count, dtype=x.dtype)

    def backward(g):
        q = np.full_like(x, epsilon / vocab)
        q[rows, safe_gold] += 1.0 - epsilon
        grad = (np.exp(logp) - q) * valid[:, None]
        return (grad * (g / count),)

    return _node("cross_entropy", loss, (logits,), backward)


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "scale": scale,
    "softmax_row": softmax_row,
    "layer_norm": layer_norm,
    "relu": relu,
    "embedding_lookup": embedding_lookup,
    "dropout": dropout,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "transpose": transpose,
    "reshape": reshape,
    "sum": sum,
}


def primitive_forward(op: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Apply a named primitive; ``attrs`` are passed as keyword arguments."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise InvalidArgument(f"unknown primitive {op!r}") from None
    return fn(*inputs, **(attrs or {}))


# ---------------------------------------------------------------------------
# graph traversal


@dataclass
class Graph:
    """The recorded computation reachable from one output, in topological order."""

    nodes: list[Tensor] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> Graph:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        leaves = [n for n in order if n.is_leaf and n.requires_grad]
        return cls(nodes=order, leaves=leaves)


def backward(loss: Tensor, graph: Graph | None = None) -> dict[Tensor, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every leaf that requires one."""
    if loss.size != 1:
        raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    if graph is None:
        graph = Graph.trace(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            result[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if not _all_finite(pg):
                raise NonFiniteError(node.op, "backward")
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    return result
