"""Small dense reverse-mode autodiff kernel over float64 numpy arrays.

Only what the metapath-attention model and the continual-learning losses
need. Every op checks its forward output for NaN/Inf and raises
``NumericError`` naming the op.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np


class NumericError(ArithmeticError):
    pass


class ShapeError(ValueError):
    pass


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 op: str = "leaf"):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        order = _topological(self)
        for node in order:
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data) if grad is None else _as_array(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, op: str, backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by op '{op}'")
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=parents if req else (), op=op)
    if req:
        out._backward = backward
    return out


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from exc

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _make(data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), "mul", bw)


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _make(a.data * c, (a,), "scale", lambda g: _accum(a, g * c))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), "matmul", bw)


def transpose(a) -> Tensor:
    a = _wrap(a)
    return _make(a.data.T.copy(), (a,), "transpose", lambda g: _accum(a, g.T))


def concat(ts: Iterable, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in ts]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in ts]}") from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, sizes, axis=axis)):
            _accum(t, part)

    return _make(data, tuple(ts), "concat", bw)


def getitem(a, idx) -> Tensor:
    a = _wrap(a)
    data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(np.array(data, copy=True), (a,), "getitem", bw)


def gather_rows(a, rows) -> Tensor:
    rows = np.asarray(rows, dtype=np.int64)
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got {a.shape}")
    data = a.data[rows]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, rows, g)
        _accum(a, full)

    return _make(data, (a,), "gather_rows", bw)


def segment_sum(a, segments, n_segments: int) -> Tensor:
    """Row-wise scatter-add: out[s] = sum of a[i] with segments[i] == s."""
    a = _wrap(a)
    segments = np.asarray(segments, dtype=np.int64)
    data = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(data, segments, a.data)
    return _make(data, (a,), "segment_sum", lambda g: _accum(a, g[segments]))


# -------------------------------------------------------------- elementwise

def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    return _make(y, (a,), "tanh", lambda g: _accum(a, g * (1.0 - y * y)))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _wrap(a)
    neg = a.data < 0
    y = np.where(neg, alpha * np.expm1(np.minimum(a.data, 0.0)), a.data)
    return _make(y, (a,), "elu",
                 lambda g: _accum(a, g * np.where(neg, y + alpha, 1.0)))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _wrap(a)
    pos = a.data >= 0
    y = np.where(pos, a.data, slope * a.data)
    return _make(y, (a,), "leaky_relu",
                 lambda g: _accum(a, g * np.where(pos, 1.0, slope)))


def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _make(y, (a,), "exp", lambda g: _accum(a, g * y))


def log(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    return _make(y, (a,), "log", lambda g: _accum(a, g / a.data))


def clip_min(a, floor: float) -> Tensor:
    """max(a, floor); clipped entries pass no gradient."""
    a = _wrap(a)
    keep = a.data >= floor
    y = np.where(keep, a.data, floor)
    return _make(y, (a,), "clip_min", lambda g: _accum(a, g * keep))


# ---------------------------------------------------------------- reductions

def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(data), (a,), "reduce_sum", bw)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("reduce_mean over an empty axis")
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def l2_norm(a, axis=None) -> Tensor:
    """Euclidean norm; the subgradient at zero is taken as zero."""
    a = _wrap(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis))

    def bw(g):
        safe = np.where(norm > 0, norm, 1.0)
        ratio = np.where(norm > 0, g / safe, 0.0)
        if axis is not None:
            ratio = np.expand_dims(ratio, axis)
        _accum(a, a.data * ratio)

    return _make(np.asarray(norm), (a,), "l2_norm", bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), "softmax", bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def bw(g):
        _accum(a, g - p * g.sum(axis=axis, keepdims=True))

    return _make(y, (a,), "log_softmax", bw)


def segment_softmax(a, segments, n_segments: int) -> Tensor:
    """Softmax of a column vector within groups given by ``segments``."""
    a = _wrap(a)
    segments = np.asarray(segments, dtype=np.int64)
    if a.data.ndim != 2 or a.shape[1] != 1:
        raise ShapeError(f"segment_softmax expects (E, 1), got {a.shape}")
    x = a.data[:, 0]
    seg_max = np.full(n_segments, -np.inf)
    np.maximum.at(seg_max, segments, x)
    e = np.exp(x - seg_max[segments])
    denom = np.zeros(n_segments)
    np.add.at(denom, segments, e)
    y = (e / denom[segments])[:, None]

    def bw(g):
        gy = (g * y)[:, 0]
        tot = np.zeros(n_segments)
        np.add.at(tot, segments, gy)
        _accum(a, y * (g - tot[segments][:, None]))

    return _make(y, (a,), "segment_softmax", bw)


# ------------------------------------------------------------------ params

class ParamSet:
    """Named float64 arrays, always iterated in sorted key order."""

    def __init__(self, arrays: dict | None = None):
        self._arrays = {}
        for k, v in (arrays or {}).items():
            self._arrays[k] = np.array(v, dtype=np.float64, copy=True)

    def keys(self):
        return sorted(self._arrays)

    def items(self):
        return [(k, self._arrays[k]) for k in self.keys()]

    def __getitem__(self, key):
        return self._arrays[key]

    def __contains__(self, key):
        return key in self._arrays

    def __len__(self):
        return len(self._arrays)

    def __iter__(self):
        return iter(self.keys())

    def copy(self) -> "ParamSet":
        return ParamSet(self._arrays)

    def shapes(self) -> dict:
        return {k: v.shape for k, v in self.items()}

    def as_tensors(self, requires_grad: bool = False) -> dict:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.items()}

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet({k: fn(k, v) for k, v in self.items()})

    def axpy(self, alpha: float, other: "ParamSet") -> "ParamSet":
        """self + alpha * other, as a new ParamSet."""
        return ParamSet({k: v + alpha * other[k] for k, v in self.items()})

    def equals(self, other: "ParamSet") -> bool:
        if self.keys() != other.keys():
            return False
        return all(np.array_equal(v, other[k]) for k, v in self.items())


def value_and_grad(loss_fn: Callable[[dict], Tensor], params: ParamSet):
    """Evaluate ``loss_fn`` on leaf tensors and return (loss, grads)."""
    leaves = params.as_tensors(requires_grad=True)
    loss = loss_fn(leaves)
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    loss.backward()
    grads = ParamSet({k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                      for k, t in leaves.items()})
    return float(loss.data.reshape(())), grads


def _eval(loss_fn, params: ParamSet) -> float:
    val = float(np.asarray(loss_fn(params.as_tensors()).data).reshape(()))
    if not np.isfinite(val):
        raise NumericError("non-finite loss during gradient check")
    return val


def gradient_check(loss_fn: Callable[[dict], Tensor], params: ParamSet,
                   eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per element is |a - n| / max(1e-8, |a| + |n|).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    loss, grads = value_and_grad(loss_fn, params)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss during gradient check")
    worst = 0.0
    work = params.copy()
    for key in work.keys():
        arr = work[key]
        flat = arr.reshape(-1)
        analytic = grads[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _eval(loss_fn, work)
            flat[i] = orig - eps
            down = _eval(loss_fn, work)
            flat[i] = orig
            num = (up - down) / (2 * eps)
            err = abs(analytic[i] - num) / max(1e-8, abs(analytic[i]) + abs(num))
            worst = max(worst, err)
    return worst
