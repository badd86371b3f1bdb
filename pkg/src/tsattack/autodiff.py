"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations executed inside an active :class:`Tape` are recorded in creation
order; :meth:`Tape.backward` walks the record in reverse and accumulates
vector-Jacobian products into every leaf that requires a gradient.  Outside a
tape, operations run eagerly without recording, which is what inference uses.

Example::

    with Tape() as tape:
        x = Tensor([3.0], requires_grad=True)
        loss = (x * x).sum()
    grads = tape.backward(loss)
    grads[x]  # array([6.])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, TsAttackError

__all__ = [
    "Tensor",
    "Tape",
    "TapeNode",
    "GradientMap",
    "backward",
    "add",
    "sub",
    "mul",
    "matmul",
    "add_bias",
    "tanh",
    "sigmoid",
    "mse_loss",
    "sse_loss",
]

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class TapeNode:
    """One recorded operation: its output, its inputs and its VJP closure."""

    __slots__ = ("op", "out", "parents", "vjp")

    def __init__(self, op: str, out: "Tensor", parents: tuple["Tensor", ...], vjp: Callable):
        self.op = op
        self.out = out
        self.parents = parents
        self.vjp = vjp

    def __repr__(self) -> str:
        return f"TapeNode({self.op}, out_shape={self.out.shape})"


class GradientMap(dict):
    """Mapping from leaf :class:`Tensor` to its gradient array (same shape)."""


class Tape:
    """Records operations for a single forward pass.

    A tape may be differentiated once; afterwards its node list is dropped.
    Tapes are not shared between threads.
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] | None = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: TapeNode) -> None:
        if self.nodes is None:
            raise TsAttackError("tape has already been differentiated")
        self.nodes.append(node)

    def backward(self, loss: "Tensor", wrt: Iterable["Tensor"] = ()) -> GradientMap:
        """Gradient of scalar ``loss`` w.r.t. every grad-requiring leaf.

        Leaves listed in ``wrt`` that the loss does not depend on receive
        zero gradients.
        """
        if self.nodes is None:
            raise TsAttackError("tape has already been differentiated")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        wrt = list(wrt)
        nodes = self.nodes
        self.nodes = None

        produced = {id(n.out) for n in nodes}
        leaves: dict[int, Tensor] = {}
        for n in nodes:
            for p in n.parents:
                if p.requires_grad and id(p) not in produced:
                    leaves.setdefault(id(p), p)
        for t in wrt:
            leaves.setdefault(id(t), t)

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            pgrads = node.vjp(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg

        out = GradientMap()
        for key, leaf in leaves.items():
            g = grads.get(key)
            out[leaf] = np.zeros_like(leaf.data) if g is None else g.reshape(leaf.shape)
        return out


def backward(loss: "Tensor", wrt: Iterable["Tensor"] = ()) -> GradientMap:
    """Differentiate ``loss`` on the tape that produced it."""
    tape = loss._tape
    if tape is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        # Loss never touched a recording op, so it is constant in everything.
        return GradientMap({t: np.zeros_like(t.data) for t in wrt})
    return tape.backward(loss, wrt)


class Tensor:
    """Dense float64 array that participates in the active tape."""

    __slots__ = ("data", "requires_grad", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def sum(self) -> "Tensor":
        return _sum(self)

    def mean(self) -> "Tensor":
        return _mean(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if not np.isfinite(value).all():
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor(value)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape.record(TapeNode(op, out, tuple(parents), vjp))
    return out


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    # only scalar-with-tensor broadcasting exists
    return np.asarray(g.sum()) if t.ndim == 0 and g.ndim != 0 else g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a), _unbroadcast(g * ad, b)))


def matmul(a, b) -> Tensor:
    """Matrix product for 2-D @ 2-D and 2-D @ 1-D operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        vjp = lambda g: (g @ bd.T, ad.T @ g)
    else:
        vjp = lambda g: (np.outer(g, bd), ad.T @ g)
    return _make("matmul", ad @ bd, (a, b), vjp)


def add_bias(x, b) -> Tensor:
    """Add a bias vector ``b`` of shape (H,) to every row of ``x`` (..., H)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {b.shape} do not conform")
    h = b.shape[0]
    return _make("add_bias", x.data + b.data, (x, b),
                 lambda g: (g, g.reshape(-1, h).sum(axis=0)))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _make("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # tanh form cannot overflow for large |a|
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def _sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _make("sum", np.asarray(a.data.sum()), (a,),
                 lambda g: (np.full(shape, float(g)),))


def _mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _make("mean", np.asarray(a.data.mean()), (a,),
                 lambda g: (np.full(shape, float(g) / n),))


def _reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {orig} as {shape}") from None
    return _make("reshape", value, (a,), lambda g: (g.reshape(orig),))


def _getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def vjp(g):
        z = np.zeros(shape)
        np.add.at(z, idx, g)
        return (z,)

    return _make("getitem", np.array(a.data[idx]), (a,), vjp)


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences, as a scalar node."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    d = pred - target
    return (d * d).mean()


def sse_loss(pred, target) -> Tensor:
    """Sum of squared differences; the gradient for each sample is its own."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"sse_loss: shapes {pred.shape} and {target.shape} differ")
    d = pred - target
    return (d * d).sum()
