"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a backward closure on the output tensor; calling
``backward()`` on a scalar walks the graph in reverse topological order and
accumulates gradients into tensors that requested them. The graph is rebuilt
from scratch on every forward pass, so one training step = one tape.

All arithmetic is 64-bit and single-threaded with a fixed reduction order,
which keeps repeated runs bitwise identical.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteOutput, ShapeMismatch

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (fast inference/finite-diff)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar output."""
        if self.data.size != 1:
            raise ShapeMismatch("backward", self.data.shape, ())
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS; forward graphs can be thousands of nodes deep.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result; records the tape only when a parent needs grads."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# --- elementwise and linear algebra -------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape) from None

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, mul(b, _as_tensor(-1.0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch("mul", a.shape, b.shape) from None

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands with numpy semantics."""
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeMismatch("matmul", a.shape, b.shape) from None

    def backward(g):
        a2 = a.data.reshape(1, -1) if a.ndim == 1 else a.data
        b2 = b.data.reshape(-1, 1) if b.ndim == 1 else b.data
        g2 = g
        if a.ndim == 1 and b.ndim == 1:
            g2 = g.reshape(1, 1)
        elif a.ndim == 1:
            g2 = g.reshape(1, -1)
        elif b.ndim == 1:
            g2 = g.reshape(-1, 1)
        ga = g2 @ b2.T
        gb = a2.T @ g2
        _accumulate(a, ga.reshape(a.data.shape))
        _accumulate(b, gb.reshape(b.data.shape))

    return _make(data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b``."""
    return add(matmul(x, w), b)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatch("transpose", a.shape)

    def backward(g):
        _accumulate(a, g.T)

    return _make(a.data.T.copy(), (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat", ())
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _accumulate(t, g[tuple(sl)])

    return _make(data, tuple(tensors), backward)


def split(a: Tensor, sections: int | Sequence[int], axis: int = 0) -> list[Tensor]:
    """Inverse of concat; returns views copied into fresh tensors."""
    pieces = np.split(a.data, sections, axis=axis)
    outs = []
    start = 0
    for piece in pieces:
        stop = start + piece.shape[axis]
        s0, s1 = start, stop

        def backward(g, s0=s0, s1=s1):
            buf = np.zeros_like(a.data)
            sl = [slice(None)] * buf.ndim
            sl[axis] = slice(s0, s1)
            buf[tuple(sl)] = g
            _accumulate(a, buf)

        outs.append(_make(piece.copy(), (a,), backward))
        start = stop
    return outs


# --- nonlinearities ------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, slope * a.data)

    def backward(g):
        _accumulate(a, g * np.where(mask, 1.0, slope))

    return _make(data, (a,), backward)


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    mask = a.data > 0
    expm1 = alpha * np.expm1(np.minimum(a.data, 0.0))
    data = np.where(mask, a.data, expm1)

    def backward(g):
        _accumulate(a, g * np.where(mask, 1.0, expm1 + alpha))

    return _make(data, (a,), backward)


def identity(a: Tensor) -> Tensor:
    return a


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _make(data, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def backward(g):
        soft = np.exp(data)
        _accumulate(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gamma.data + beta.data
    n = x.data.shape[-1]

    def backward(g):
        _accumulate(beta, _unbroadcast(g, beta.data.shape))
        _accumulate(gamma, _unbroadcast(g * xhat, gamma.data.shape))
        gx = g * gamma.data
        # d/dx of (x - mu) * inv, with mu and var both functions of x.
        gxhat_sum = gx.sum(axis=-1, keepdims=True)
        gxhat_dot = (gx * xhat).sum(axis=-1, keepdims=True)
        _accumulate(x, inv * (gx - gxhat_sum / n - xhat * gxhat_dot / n))

    return _make(data, (x, gamma, beta), backward)


# --- reductions ----------------------------------------------------------


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accumulate(a, np.full(a.data.shape, g))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(data, (a,), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis), _as_tensor(1.0 / count))


def max_pool(a: Tensor, axis: int) -> Tensor:
    """Max-reduce along an axis; gradient flows to the first argmax."""
    data = a.data.max(axis=axis)
    arg = a.data.argmax(axis=axis)

    def backward(g):
        buf = np.zeros_like(a.data)
        idx = list(np.indices(data.shape))
        idx.insert(axis if axis >= 0 else a.data.ndim + axis, arg)
        buf[tuple(idx)] = g
        _accumulate(a, buf)

    return _make(data, (a,), backward)


# --- norms and similarity ------------------------------------------------


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale rows (last axis) to unit Euclidean norm."""
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    safe = np.maximum(norm, eps)
    data = a.data / safe

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - data * dot) / safe)

    return _make(data, (a,), backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of the angle between two 1-D vectors (scalar output)."""
    if a.data.shape != b.data.shape or a.ndim != 1:
        raise ShapeMismatch("cosine_similarity", a.shape, b.shape)
    na = np.sqrt((a.data * a.data).sum())
    nb = np.sqrt((b.data * b.data).sum())
    denom = na * nb
    if denom == 0.0:
        raise ValueError("cosine_similarity: zero-norm input")
    dot = float(a.data @ b.data)
    data = np.asarray(dot / denom)

    def backward(g):
        g = float(g)
        _accumulate(a, g * (b.data / denom - (dot / (na * na)) * a.data / denom))
        _accumulate(b, g * (a.data / denom - (dot / (nb * nb)) * b.data / denom))

    return _make(data, (a, b), backward)


# --- indexing ------------------------------------------------------------


def rows(a: Tensor, indices) -> Tensor:
    """Gather rows (first axis) by integer index; repeats accumulate."""
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        _accumulate(a, buf)

    return _make(data, (a,), backward)


def pick(a: Tensor, indices) -> Tensor:
    """Per-row element pick: out[i] = a[i, indices[i]]."""
    idx = np.asarray(indices, dtype=np.int64)
    if a.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ShapeMismatch("pick", a.shape, idx.shape)
    rng = np.arange(a.data.shape[0])
    data = a.data[rng, idx]

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, (rng, idx), g)
        _accumulate(a, buf)

    return _make(data, (a,), backward)


# --- segment ops (ragged neighborhoods) ----------------------------------


def _segment_bounds(segment_ids: np.ndarray) -> np.ndarray:
    starts = np.flatnonzero(np.diff(segment_ids, prepend=segment_ids[0] - 1))
    return starts


def segment_softmax(scores: Tensor, segment_ids) -> Tensor:
    """Softmax within contiguous runs of equal ``segment_ids`` (1-D scores).

    Ids must be sorted ascending so each segment is one contiguous block.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    if scores.ndim != 1 or seg.shape != scores.data.shape:
        raise ShapeMismatch("segment_softmax", scores.shape, seg.shape)
    if seg.size and np.any(np.diff(seg) < 0):
        raise ShapeMismatch("segment_softmax", "segment ids not sorted")
    starts = _segment_bounds(seg)
    seg_max = np.maximum.reduceat(scores.data, starts)
    spread = np.repeat(seg_max, np.diff(np.append(starts, seg.size)))
    e = np.exp(scores.data - spread)
    seg_sum = np.add.reduceat(e, starts)
    data = e / np.repeat(seg_sum, np.diff(np.append(starts, seg.size)))

    def backward(g):
        dot = np.add.reduceat(g * data, starts)
        dot_spread = np.repeat(dot, np.diff(np.append(starts, seg.size)))
        _accumulate(scores, data * (g - dot_spread))

    return _make(data, (scores,), backward)


def segment_sum(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows that share a segment id into out[segment_id]."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    out_shape = (num_segments,) + values.data.shape[1:]
    data = np.zeros(out_shape, dtype=np.float64)
    np.add.at(data, seg, values.data)

    def backward(g):
        _accumulate(values, g[seg])

    return _make(data, (values,), backward)


# --- parameters and gradient checking -------------------------------------


@dataclass
class Parameter:
    """A named trainable tensor assigned to a learning-rate group."""

    name: str
    tensor: Tensor
    lr_group: str = "other"  # vision | graph | other

    def __post_init__(self):
        self.tensor.requires_grad = True


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.tensor.zero_grad()


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords_per_tensor: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of a scalar function against central
    finite differences, coordinate by coordinate.

    ``f`` must recompute its output from the current contents of ``inputs``;
    the checker perturbs them in place. Returns the maximum relative error
    ``|a - n| / max(|a|, |n|, 1e-8)``. When ``max_coords_per_tensor`` is set,
    a seeded subsample of coordinates per tensor is checked instead of all
    of them (every tensor is still covered).
    """
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteOutput("grad_check: function output is not finite")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n_coords = flat.size
        if max_coords_per_tensor is not None and n_coords > max_coords_per_tensor:
            coords = rng.choice(n_coords, size=max_coords_per_tensor, replace=False)
            coords.sort()
        else:
            coords = range(n_coords)
        a_flat = a.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                hi = float(f().data)
            flat[i] = orig - eps
            with no_grad():
                lo = float(f().data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteOutput("grad_check: perturbed output is not finite")
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
