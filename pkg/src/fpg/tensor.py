"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation computes its value eagerly with numpy and, when a tape is
active and an input requires gradients, records a backward closure on that
tape.  Gradients are exact analytic derivatives; the test suite validates
each primitive against central finite differences.

Tapes are kept on a thread-local stack, so independent model replicas can
run on separate threads.  Tensors with completed values are never mutated
by the engine itself (the optimizer updates parameter ``data`` in place
between tapes).
"""

from __future__ import annotations

import itertools
import threading
import warnings

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "backward",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "stack",
    "getitem",
    "gather",
    "pick",
    "sum_",
    "mean",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "power",
    "clip",
    "softmax_masked",
    "layer_norm",
    "cross_entropy_from_logits",
    "gru_cell",
]

_node_ids = itertools.count()
_local = threading.local()


def _stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, float(p))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Nodes are appended in execution order, so replaying the list backward
    visits every node after all of its consumers.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted")

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        self._nodes.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._nodes.append((out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor reachable
    from ``loss`` on the active tape that requires gradients."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward requires an active tape")
    if loss.data.size != 1:
        raise ValueError("loss must be a scalar tensor")
    produced = {out.node_id for out, _, _ in tape._nodes}
    if loss.node_id not in produced:
        warnings.warn("backward on a detached graph: no gradients produced")
        return
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape._nodes):
        g = grads.get(out.node_id)
        if g is None:
            continue
        for tensor, contrib in zip(inputs, backward_fn(g)):
            if contrib is None or not tensor.requires_grad:
                continue
            acc = grads.get(tensor.node_id)
            grads[tensor.node_id] = contrib if acc is None else acc + contrib
    written: set[int] = set()
    for out, inputs, _ in tape._nodes:
        for t in (out, *inputs):
            if t.node_id in written or not t.requires_grad:
                continue
            g = grads.get(t.node_id)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g
            written.add(t.node_id)


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands or equal-batch 3-D stacks."""
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    if A.ndim == 3 and B.ndim == 3 and A.shape[0] != B.shape[0]:
        raise ValueError("batched matmul requires equal leading dimensions")
    data = A @ B

    def bwd(g):
        if A.ndim == 1 and B.ndim == 2:  # (k,) @ (k,n) -> (n,)
            return g @ B.T, np.outer(A, g)
        if A.ndim == 2 and B.ndim == 1:  # (m,k) @ (k,) -> (m,)
            return np.outer(g, B), A.T @ g
        if A.ndim == 1 and B.ndim == 1:  # dot -> scalar
            return g * B, g * A
        return g @ B.swapaxes(-1, -2), A.swapaxes(-1, -2) @ g

    return _make(data, (a, b), bwd)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    data = np.transpose(a.data, axes)

    def bwd(g):
        if axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(axes)),)

    return _make(data, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    data = np.reshape(a.data, shape)
    return _make(data, (a,), lambda g: (np.reshape(g, old),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), bwd)


def stack(tensors) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    rows = [reshape(t, (1,) + as_tensor(t).shape) for t in tensors]
    return concat(rows, axis=0)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    data = np.array(a.data[idx])
    shape = a.data.shape

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(data, (a,), bwd)


def gather(table, ids) -> Tensor:
    """Row lookup (embedding): ``table[ids]`` with accumulation on repeat ids."""
    return getitem(table, np.asarray(ids, dtype=np.intp))


def pick(a, ids) -> Tensor:
    """Per-row element ``a[i, ids[i]]`` for a 2-D tensor."""
    ids = np.asarray(ids, dtype=np.intp)
    return getitem(a, (np.arange(ids.size), ids))


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g):
        return (np.ascontiguousarray(_expand_reduced(g, shape, axis, keepdims)),)

    return _make(data, (a,), bwd)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]

    def bwd(g):
        return (np.ascontiguousarray(_expand_reduced(g, shape, axis, keepdims)) / n,)

    return _make(data, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))  # overflow-safe logistic
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    data = a.data**p
    return _make(data, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g):
        return (g * inside,)

    return _make(np.clip(a.data, lo, hi), (a,), bwd)


def softmax_masked(logits, mask=None) -> Tensor:
    """Softmax over the last axis, restricted to unmasked positions.

    ``mask`` holds keep-flags (True = position participates) and may be a
    vector over the last axis or any shape broadcastable to ``logits``.
    Masked positions come out exactly zero.
    """
    x = as_tensor(logits)
    v = x.data
    if np.isnan(v).any():
        raise ValueError("NaN input to softmax")
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if not keep.any(axis=-1).all():
            raise ValueError("degenerate attention row: all positions masked")
        v = np.where(keep, v, -np.inf)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)  # exp(-inf) == 0 exactly at masked slots
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _make(p, (x,), bwd)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance,
    then scale by ``gain`` and shift by ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(v.ndim - 1))

    def bwd(g):
        d_gain = (g * xhat).sum(axis=lead) if lead else g * xhat
        d_bias = g.sum(axis=lead) if lead else g.copy()
        d_hat = g * gain.data
        d_x = inv * (
            d_hat
            - d_hat.mean(axis=-1, keepdims=True)
            - xhat * (d_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return d_x, d_gain, d_bias

    return _make(out, (x, gain, bias), bwd)


def cross_entropy_from_logits(logits, targets) -> Tensor:
    """Per-position negative log softmax probability of ``targets``.

    ``logits`` is [n, vocab]; ``targets`` an int vector of length n.
    Returns the length-n vector of losses.
    """
    x = as_tensor(logits)
    t = np.asarray(targets, dtype=np.intp)
    v = x.data
    if v.ndim != 2 or t.shape != (v.shape[0],):
        raise ValueError("cross entropy expects [n, vocab] logits and n targets")
    m = v.max(axis=-1, keepdims=True)
    e = np.exp(v - m)
    z = e.sum(axis=-1, keepdims=True)
    rows = np.arange(v.shape[0])
    nll = (np.log(z) + m)[:, 0] - v[rows, t]

    def bwd(g):
        grad = (e / z) * g[:, None]
        grad[rows, t] -= g
        return (grad,)

    return _make(nll, (x,), bwd)


def gru_cell(x, h_prev, params) -> Tensor:
    """One gated-recurrent-unit step.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    htilde = tanh(x Wh + (r*h) Uh + bh), h' = (1-z)*h + z*htilde.

    ``params`` maps the keys wz,uz,bz,wr,ur,br,wh,uh,bh to tensors.
    """
    z = sigmoid(matmul(x, params["wz"]) + matmul(h_prev, params["uz"]) + params["bz"])
    r = sigmoid(matmul(x, params["wr"]) + matmul(h_prev, params["ur"]) + params["br"])
    h_tilde = tanh(
        matmul(x, params["wh"]) + matmul(mul(r, h_prev), params["uh"]) + params["bh"]
    )
    return add(mul(sub(1.0, z), h_prev), mul(z, h_tilde))
