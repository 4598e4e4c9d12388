"""Tape-based reverse-mode automatic differentiation over dense float64 tensors.

Every op records a node only when some input carries gradients; anything
computed purely from constants stays a constant, so frozen weights never
enter the tape.  ``backward`` walks the recorded graph once in reverse
topological order and accumulates into ``grad``, which means a tensor used
twice receives the sum of both contributions.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .errors import ContractError, NumericalError, ShapeError

RMS_EPS = 1e-6
MIN_L2_NORM = 1e-12


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the stored values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(other))

    def __sub__(self, other):
        return sub(self, other if isinstance(other, Tensor) else Tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _require_2d(op: str, t: Tensor) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-d tensor, got shape {t.data.shape}")


# ---------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    _require_2d("transpose", a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _node(a.data.T.copy(), (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    # Same shape, or a row-wise bias: (m, n) + (n,).
    bias = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias and a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not conform")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0) if bias else g)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} do not conform")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not conform")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accumulate(c * g)

    return _node(a.data * c, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    return _node(y, (a,), backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y)

    return _node(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _node(np.log(a.data), (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    _require_2d("softmax_rows", a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * p).sum(axis=1, keepdims=True)
            a._accumulate(p * (g - dot))

    return _node(p, (a,), backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log(softmax(x)), fused so extreme logits stay finite."""
    _require_2d("log_softmax_rows", a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - log_z
    p = np.exp(y)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g - p * g.sum(axis=1, keepdims=True))

    return _node(y, (a,), backward)


def l2_normalize(a: Tensor) -> Tensor:
    """x / ||x||_2 along the last axis; errors on near-zero norms."""
    x = a.data
    if x.ndim == 1:
        n = math.sqrt(float(x @ x))
        if n < MIN_L2_NORM:
            raise NumericalError(f"l2_normalize: norm {n:.3e} below {MIN_L2_NORM:.0e}")
        y = x / n

        def backward(g):
            if a.requires_grad:
                a._accumulate((g - y * float(y @ g)) / n)

        return _node(y, (a,), backward)

    _require_2d("l2_normalize", a)
    n = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if float(n.min()) < MIN_L2_NORM:
        raise NumericalError(f"l2_normalize: row norm {float(n.min()):.3e} below {MIN_L2_NORM:.0e}")
    y = x / n

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            a._accumulate((g - y * dot) / n)

    return _node(y, (a,), backward)


def rms_normalize(a: Tensor) -> Tensor:
    """x / sqrt(mean(x^2) + eps) along the last axis."""
    x = a.data
    if x.ndim == 1:
        k = x.shape[0]
        r = math.sqrt(float((x * x).mean()) + RMS_EPS)
        y = x / r

        def backward(g):
            if a.requires_grad:
                a._accumulate(g / r - x * (float(g @ x) / (k * r ** 3)))

        return _node(y, (a,), backward)

    _require_2d("rms_normalize", a)
    k = x.shape[1]
    r = np.sqrt((x * x).mean(axis=1, keepdims=True) + RMS_EPS)
    y = x / r

    def backward(g):
        if a.requires_grad:
            dot = (g * x).sum(axis=1, keepdims=True)
            a._accumulate(g / r - x * (dot / (k * r ** 3)))

    return _node(y, (a,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-d tensors along the token (row) axis."""
    if not parts:
        raise ShapeError("concat_rows: empty part list")
    cols = parts[0].data.shape[1] if parts[0].data.ndim == 2 else None
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != cols:
            raise ShapeError(
                f"concat_rows: shapes {[tuple(q.data.shape) for q in parts]} do not conform"
            )
    parts = tuple(parts)

    def backward(g):
        row = 0
        for p in parts:
            r = p.data.shape[0]
            if p.requires_grad:
                p._accumulate(g[row:row + r])
            row += r

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, backward)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-d tensors into a 2-d matrix, one per row."""
    if not vectors:
        raise ShapeError("stack_rows: empty vector list")
    width = vectors[0].data.shape[0] if vectors[0].data.ndim == 1 else None
    for v in vectors:
        if v.data.ndim != 1 or v.data.shape[0] != width:
            raise ShapeError(
                f"stack_rows: shapes {[tuple(q.data.shape) for q in vectors]} do not conform"
            )
    vectors = tuple(vectors)

    def backward(g):
        for i, v in enumerate(vectors):
            if v.requires_grad:
                v._accumulate(g[i])

    return _node(np.stack([v.data for v in vectors]), vectors, backward)


def select_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    _require_2d("select_rows", a)
    rows = a.data.shape[0]
    idx = list(indices)
    for i in idx:
        if not 0 <= i < rows:
            raise IndexError(f"select_rows: index {i} out of range for {rows} rows")

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

    return _node(a.data[idx], (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view shape {a.data.shape} as {shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    _require_2d("mean_axis", a)
    if axis not in (0, 1):
        raise ShapeError(f"mean_axis: axis {axis} invalid for shape {a.data.shape}")
    n = a.data.shape[axis]

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.expand_dims(g, axis) * np.full_like(a.data, 1.0 / n))

    return _node(a.data.mean(axis=axis), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g)))

    return _node(a.data.sum(), (a,), backward)


def sq_dist(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distance between two equal-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sq_dist: shapes {a.data.shape} and {b.data.shape} do not conform")
    d = a.data - b.data

    def backward(g):
        gg = float(g)
        if a.requires_grad:
            a._accumulate(2.0 * gg * d)
        if b.requires_grad:
            b._accumulate(-2.0 * gg * d)

    return _node((d * d).sum(), (a, b), backward)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate grads on every requires_grad ancestor of a scalar root."""
    if root.data.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    root._accumulate(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(fn, point, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must map a single tensor to a scalar tensor.  The relative error at
    each coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    if h <= 0:
        raise ContractError(f"grad_check: step must be positive, got {h}")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    out = fn(x)
    if out.data.size != 1:
        raise ContractError(f"grad_check: fn must be scalar-valued, got shape {out.data.shape}")
    backward(out)
    analytic = np.zeros_like(base) if x.grad is None else x.grad.reshape(-1)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)

    flat = base.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = float(fn(Tensor(base.copy())).data)
        flat[i] = saved - h
        fm = float(fn(Tensor(base.copy())).data)
        flat[i] = saved
        numeric = (fp - fm) / (2.0 * h)
        if not (math.isfinite(numeric) and math.isfinite(analytic[i])):
            raise NumericalError(f"grad_check: non-finite gradient at coordinate {i}")
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        if err > worst:
            worst = err
    return worst
