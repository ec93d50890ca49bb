"""Small dense tensor library with tape-based reverse-mode differentiation.

Tensors wrap float64 numpy arrays. Operations evaluated while a :class:`Tape`
is active, and that touch a parameter (or something derived from one), are
recorded together with a local backward rule. ``backward`` replays the tape in
reverse and accumulates gradients into every parameter reached.

Outside a tape every op is a plain numpy computation, which is what evaluation
and language dumps use.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "DimensionError",
    "Tensor",
    "Tape",
    "parameter",
    "constant",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "linear",
    "activation",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "softmax",
    "log_softmax",
    "entropy_categorical",
    "reduce",
    "sum",
    "mean",
    "concat",
    "gather_rows",
    "repeat_rows",
    "slice_cols",
    "select",
    "reshape",
    "detach",
    "backward",
    "zero_grad",
]

# Finiteness assertions on every forward op; off by default because they cost
# a full pass over each output.
CHECK_FINITE = os.environ.get("EMERGENCE_DEBUG", "") not in ("", "0")


class DimensionError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        kind = "param" if self.requires_grad else "tensor"
        return f"Tensor({kind}, shape={self.shape}, name={self.name!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nesting is allowed and the innermost tape records.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    def __len__(self):
        return len(self.ops)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Callable):
        self.ops.append((out, inputs, rule))

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.ops:
            raise RuntimeError("backward called on an empty tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        reached: dict[int, Tensor] = {}
        if loss.requires_grad:
            reached[id(loss)] = loss
        for out, inputs, rule in reversed(self.ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = rule(g)
            for inp, gi in zip(inputs, in_grads):
                if gi is None or not inp._tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.requires_grad:
                    reached[key] = inp
        result = {}
        for key, p in reached.items():
            g = grads.get(key)
            if g is None:
                continue
            p.grad += g
            result[p] = g
        if params is not None:
            result = {p: result.get(p, np.zeros_like(p.data)) for p in params}
        return result


def _record(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = ""
    out._tracked = False
    if Tape._stack:
        for t in inputs:
            if t._tracked:
                out._tracked = True
                Tape._stack[-1].record(out, inputs, rule)
                break
    return out


def backward(loss: Tensor, params: Iterable[Tensor] | None = None, tape: Tape | None = None) -> dict:
    """Differentiate ``loss`` and accumulate into each parameter's ``.grad``.

    Returns a map from parameter to the gradient contributed by this call. When
    ``params`` is given the map covers exactly those parameters, zero-filled for
    any the loss does not depend on.
    """
    if tape is None:
        if not Tape._stack:
            raise RuntimeError("backward needs an active tape or an explicit one")
        tape = Tape._stack[-1]
    return tape.backward(loss, params)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "scalar"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "bias"
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, kind: str) -> np.ndarray:
    if kind == "same":
        return g
    if kind == "scalar":
        return np.asarray(g.sum())
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and (b.ndim > a.ndim or (a.ndim == 0)):
        a, b = b, a
    kind = _broadcast_kind(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, kind)))


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and (b.ndim > a.ndim or (a.ndim == 0)):
        a, b = b, a
    kind = _broadcast_kind(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, _reduce_to(g * ad, kind)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with weight stored as [out, in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    if bias is None:
        return _record(xd @ wd.T, (x, weight), lambda g: (g @ wd, g.T @ xd))
    if bias.shape != (wd.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = xd @ wd.T
    out += bias.data
    return _record(out, (x, weight, bias), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _record(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _record(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _record(e, (x,), lambda g: (g * e,))


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    z = logits.data
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    return _record(p, (logits,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),))


def log_softmax(logits: Tensor) -> Tensor:
    lp = _log_softmax_np(logits.data)

    def rule(g):
        p = np.exp(lp)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record(lp, (logits,), rule)


def entropy_categorical(logits: Tensor) -> Tensor:
    """Entropy (nats) of softmax(logits) over the last axis."""
    lp = _log_softmax_np(logits.data)
    p = np.exp(lp)
    plogp = np.where(p > 0, p * lp, 0.0)
    h = -plogp.sum(axis=-1)

    def rule(g):
        # dH/dz_j = -p_j (log p_j + H)
        return (-np.expand_dims(g, -1) * (plogp + p * np.expand_dims(h, -1)),)

    return _record(h, (logits,), rule)


# ---------------------------------------------------------------------------
# reductions and shape ops


def reduce(kind: str, x: Tensor, axis: int | None = None) -> Tensor:
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    shape = x.shape
    if axis is not None:
        if not -x.ndim <= axis < x.ndim:
            raise DimensionError(f"{kind}: axis {axis} out of range for shape {shape}")
        axis = axis % x.ndim
        n = shape[axis]
    else:
        n = x.data.size
    out = x.data.sum(axis=axis)
    if kind == "mean":
        out = out / n
    scale = 1.0 / n if kind == "mean" else 1.0

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, shape).copy(),)

    return _record(np.asarray(out), (x,), rule)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    return reduce("sum", x, axis)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    return reduce("mean", x, axis)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat of an empty list")
    ndim = parts[0].ndim
    axis = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != axis):
            raise DimensionError(f"concat: shapes {[q.shape for q in parts]} disagree off axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    data = np.concatenate([p.data for p in parts], axis=axis)
    return _record(data, tuple(parts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def gather_rows(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise IndexError(f"gather_rows: index out of bounds for table with {rows} rows")
    shape = table.shape

    def rule(g):
        return (_scatter_rows(g, ids, shape),)

    return _record(table.data[ids], (table,), rule)


def _scatter_rows(g: np.ndarray, ids: np.ndarray, shape) -> np.ndarray:
    """Sum rows of g into a zero table at positions ids (fixed summation order)."""
    if ids.size == 0:
        return np.zeros(shape)
    if shape[0] <= 64:
        onehot = np.zeros((shape[0], ids.size))
        onehot[ids, np.arange(ids.size)] = 1.0
        return (onehot @ g.reshape(ids.size, -1)).reshape(shape)
    full = np.zeros(shape)
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    full[sorted_ids[starts]] = np.add.reduceat(g[order], starts, axis=0)
    return full


def repeat_rows(x: Tensor, n: int) -> Tensor:
    """Each row of a 2-D tensor repeated n times consecutively."""
    if x.ndim != 2:
        raise DimensionError(f"repeat_rows: expects a 2-D tensor, got {x.shape}")
    b, d = x.shape
    return _record(np.repeat(x.data, n, axis=0), (x,), lambda g: (g.reshape(b, n, d).sum(axis=1),))


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns start:stop of a 2-D tensor."""
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"slice_cols: bad range {start}:{stop} for shape {x.shape}")
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _record(x.data[:, start:stop], (x,), rule)


def select(x: Tensor, index) -> Tensor:
    """Pick one entry per row of a 2-D tensor: ``out[i] = x[i, index[i]]``."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise DimensionError(f"select: expects [B, n] and [B] indices, got {x.shape} and {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise IndexError("select: index out of bounds")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        full[rows, index] = g
        return (full,)

    return _record(x.data[rows, index], (x,), rule)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from None
    return _record(data, (x,), lambda g: (g.reshape(old),))


def detach(x: Tensor) -> Tensor:
    """Same values, no gradient path (stop-gradient)."""
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.requires_grad = False
    out.grad = None
    out.name = x.name
    out._tracked = False
    return out
