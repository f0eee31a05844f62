"""Dense float64 matrix arithmetic with a reverse-mode differentiation tape.

Every value is a 2-D float64 array wrapped in a :class:`Tensor` tape node:
scalars are 1x1, row vectors 1xd. Operations validate shapes, reject
non-finite results, and record vector-Jacobian closures so that
:func:`backward` can accumulate exact gradients for every tracked leaf.
:func:`grad_check` verifies any scalar loss against central finite
differences, the independent oracle used throughout the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

REL_ERR_FLOOR = 1e-8


class Tensor:
    """A 2-D float64 array plus its position in the differentiation tape.

    Leaves created via :func:`parameter` are tracked; everything built from
    them is tracked too. Constants stay outside gradient accumulation.
    """

    __slots__ = ("data", "parents", "vjp", "track", "name")

    def __init__(self, data, parents=(), vjp=None, track=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, arr.size)
        elif arr.ndim != 2:
            raise DimensionError(f"Tensor must be 2-D, got ndim={arr.ndim}")
        if arr.size == 0:
            raise DimensionError("Tensor must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite entries in tensor of shape {arr.shape}")
        self.data = arr
        self.parents = parents
        self.vjp = vjp
        self.track = track or any(p.track for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() on non-scalar tensor {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def constant(x) -> Tensor:
    """Wrap an array or scalar as an untracked tape leaf."""
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(x, name: str) -> Tensor:
    """Wrap an array as a tracked, named leaf (a trainable parameter)."""
    arr = np.array(x, dtype=np.float64)  # own the buffer: optimizers mutate it
    return Tensor(arr, track=True, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    sa, sb = a.data.shape, b.data.shape
    ok = all(m == n or m == 1 or n == 1 for m, n in zip(sa, sb))
    if not ok:
        raise DimensionError(f"{opname}: shapes {sa} and {sb} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    """Hadamard (elementwise) product with numpy broadcasting."""
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "div")

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    with np.errstate(all="ignore"):
        out = a.data / b.data
    return Tensor(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _lift(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions differ, {a.data.shape} x {b.data.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(a.data @ b.data, (a, b), vjp)


def transpose(a) -> Tensor:
    a = _lift(a)
    return Tensor(a.data.T.copy(), (a,), lambda g: (g.T,))


def spmm(sp, b) -> Tensor:
    """Product of a constant scipy sparse matrix with a dense tensor."""
    b = _lift(b)
    if sp.shape[1] != b.data.shape[0]:
        raise DimensionError(f"spmm: {sp.shape} x {b.data.shape}")
    spT = sp.T.tocsr()

    def vjp(g):
        return (np.asarray(spT @ g),)

    return Tensor(np.asarray(sp @ b.data), (b,), vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def relu(a) -> Tensor:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)
    return Tensor(out, (a,), lambda g: (g * (a.data > 0.0),))


def tanh(a) -> Tensor:
    a = _lift(a)
    t = np.tanh(a.data)
    return Tensor(t, (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))
    return Tensor(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a) -> Tensor:
    a = _lift(a)
    with np.errstate(all="ignore"):
        e = np.exp(a.data)
    return Tensor(e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = _lift(a)
    with np.errstate(all="ignore"):
        out = np.log(a.data)
    return Tensor(out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _lift(a)
    r = np.sqrt(a.data)
    return Tensor(r, (a,), lambda g: (g / (2.0 * r),))


def square(a) -> Tensor:
    a = _lift(a)
    return Tensor(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""
    a = _lift(a)
    out = np.logaddexp(0.0, a.data)

    def vjp(g):
        return (g / (1.0 + np.exp(-a.data)),)

    return Tensor(out, (a,), vjp)


def arctan(a) -> Tensor:
    a = _lift(a)
    return Tensor(np.arctan(a.data), (a,), lambda g: (g / (1.0 + a.data * a.data),))


def arctanh(a) -> Tensor:
    a = _lift(a)
    with np.errstate(all="ignore"):
        out = np.arctanh(a.data)
    return Tensor(out, (a,), lambda g: (g / (1.0 - a.data * a.data),))


def maximum(a, c: float) -> Tensor:
    """Elementwise max with a constant; subgradient 0 on the clamped side."""
    a = _lift(a)
    return Tensor(np.maximum(a.data, c), (a,), lambda g: (g * (a.data > c),))


def minimum(a, c: float) -> Tensor:
    a = _lift(a)
    return Tensor(np.minimum(a.data, c), (a,), lambda g: (g * (a.data < c),))


# ---------------------------------------------------------------------------
# stabilized ratio kernels for the curvature maps
#
# Each computes f(u) = fn(u)/u elementwise together with an analytically
# stable derivative: the naive quotient-rule expression cancels
# catastrophically as u -> 0, so below a threshold both switch to series.

_RATIO_SWITCH = 1e-3


def _ratio_op(a: Tensor, fwd_big, fwd_series, deriv_big, deriv_series) -> Tensor:
    u = a.data
    small = np.abs(u) < _RATIO_SWITCH
    safe = np.where(small, 0.5, u)  # in-domain placeholder where the series is used
    with np.errstate(all="ignore"):
        out = np.where(small, fwd_series(u), fwd_big(safe))

    def vjp(g):
        with np.errstate(all="ignore"):
            d = np.where(small, deriv_series(u), deriv_big(safe))
        return (g * d,)

    return Tensor(out, (a,), vjp)


def tanh_ratio(a) -> Tensor:
    """tanh(u)/u, continuous through u = 0 (value 1)."""
    a = _lift(a)
    return _ratio_op(
        a,
        lambda u: np.tanh(u) / u,
        lambda u: 1.0 - u * u / 3.0 + 2.0 * u ** 4 / 15.0,
        lambda u: (u / np.cosh(u) ** 2 - np.tanh(u)) / (u * u),
        lambda u: -2.0 * u / 3.0 + 8.0 * u ** 3 / 15.0,
    )


def tan_ratio(a) -> Tensor:
    """tan(u)/u for |u| < pi/2, continuous through u = 0 (value 1)."""
    a = _lift(a)
    return _ratio_op(
        a,
        lambda u: np.tan(u) / u,
        lambda u: 1.0 + u * u / 3.0 + 2.0 * u ** 4 / 15.0,
        lambda u: (u / np.cos(u) ** 2 - np.tan(u)) / (u * u),
        lambda u: 2.0 * u / 3.0 + 8.0 * u ** 3 / 15.0,
    )


def arctanh_ratio(a) -> Tensor:
    """artanh(u)/u for |u| < 1, continuous through u = 0 (value 1)."""
    a = _lift(a)
    return _ratio_op(
        a,
        lambda u: np.arctanh(u) / u,
        lambda u: 1.0 + u * u / 3.0 + u ** 4 / 5.0,
        lambda u: (u / (1.0 - u * u) - np.arctanh(u)) / (u * u),
        lambda u: 2.0 * u / 3.0 + 4.0 * u ** 3 / 5.0,
    )


def arctan_ratio(a) -> Tensor:
    """arctan(u)/u, continuous through u = 0 (value 1)."""
    a = _lift(a)
    return _ratio_op(
        a,
        lambda u: np.arctan(u) / u,
        lambda u: 1.0 - u * u / 3.0 + u ** 4 / 5.0,
        lambda u: (u / (1.0 + u * u) - np.arctan(u)) / (u * u),
        lambda u: -2.0 * u / 3.0 + 4.0 * u ** 3 / 5.0,
    )


# ---------------------------------------------------------------------------
# reductions and row operations


def sum_all(a) -> Tensor:
    a = _lift(a)
    out = np.array([[a.data.sum()]])
    return Tensor(out, (a,), lambda g: (np.full_like(a.data, g[0, 0]),))


def sum_rows(a) -> Tensor:
    """Row sums, shape (n, 1)."""
    a = _lift(a)
    out = a.data.sum(axis=1, keepdims=True)
    return Tensor(out, (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def sum_cols(a) -> Tensor:
    """Column sums, shape (1, d)."""
    a = _lift(a)
    out = a.data.sum(axis=0, keepdims=True)
    return Tensor(out, (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def mean_all(a) -> Tensor:
    a = _lift(a)
    return mul(sum_all(a), 1.0 / a.data.size)


def softmax_rows(a) -> Tensor:
    """Row softmax with max subtraction; each row sums to 1."""
    a = _lift(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Tensor(s, (a,), vjp)


def log_softmax_rows(a) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def vjp(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return Tensor(out, (a,), vjp)


def norm_rows(a, floor: float = 1e-30) -> Tensor:
    """Euclidean norm of each row, shape (n, 1); clamped away from zero."""
    return sqrt(maximum(sum_rows(square(a)), floor))


def normalize_rows(a, floor: float = 1e-12) -> Tensor:
    """Rows rescaled to unit norm: a_i / max(||a_i||, floor)."""
    a = _lift(a)
    return div(a, maximum(norm_rows(a), floor))


def frobenius_sq(a) -> Tensor:
    """Squared Frobenius norm as a 1x1 tensor."""
    return sum_all(square(a))


def gather_rows(a, idx) -> Tensor:
    """Select rows by an integer index array (duplicates allowed)."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise DimensionError("gather_rows: index out of range")

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(a.data[idx], (a,), vjp)


def hstack(parts: Sequence) -> Tensor:
    """Concatenate tensors along columns."""
    ts = [_lift(p) for p in parts]
    rows = ts[0].data.shape[0]
    if any(t.data.shape[0] != rows for t in ts):
        raise DimensionError("hstack: row counts differ")
    widths = [t.data.shape[1] for t in ts]
    offs = np.concatenate([[0], np.cumsum(widths)])

    def vjp(g):
        return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(ts)))

    return Tensor(np.concatenate([t.data for t in ts], axis=1), tuple(ts), vjp)


def slice_cols(a, j0: int, j1: int) -> Tensor:
    a = _lift(a)
    if not (0 <= j0 < j1 <= a.data.shape[1]):
        raise DimensionError(f"slice_cols: bad range [{j0}, {j1})")

    def vjp(g):
        out = np.zeros_like(a.data)
        out[:, j0:j1] = g
        return (out,)

    return Tensor(a.data[:, j0:j1].copy(), (a,), vjp)


def straight_through(a, data: np.ndarray) -> Tensor:
    """Forward to `data`, backward as the identity on `a` (same shape)."""
    a = _lift(a)
    if data.shape != a.data.shape:
        raise DimensionError("straight_through: shape changed")
    return Tensor(data, (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def _toposort(root: Tensor) -> list:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited or not node.track:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(leaf) for every tracked leaf under `loss`.

    Returns a dict keyed by the leaf Tensor objects. The loss must be 1x1.
    """
    if not isinstance(loss, Tensor) or loss.data.shape != (1, 1):
        raise ContractError("backward expects a scalar (1x1) loss tensor")
    if not loss.track:
        return {}
    grads = {id(loss): np.ones((1, 1))}
    leaf_grads: dict = {}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            if node.track:
                leaf_grads[node] = g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.track:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return leaf_grads


@dataclass
class GradRecord:
    """Analytic-vs-numeric gradient comparison for one named parameter."""

    param_name: str
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_err: float


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_ERR_FLOOR) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor) elementwise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def grad_check(params, loss_fn: Callable[[], Tensor], step: float) -> list:
    """Central-difference verification of `backward` on every parameter.

    `params` is any iterable of (name, Tensor) pairs (a ModelParams works).
    `loss_fn` rebuilds the scalar loss from the current parameter data and
    must be deterministic. Parameter buffers are perturbed in place and
    restored exactly.
    """
    if step <= 0:
        raise ContractError("grad_check: step must be positive")
    pairs = list(params.items() if hasattr(params, "items") else params)
    leaf_grads = backward(loss_fn())
    records = []
    for name, tensor in pairs:
        analytic = leaf_grads.get(tensor)
        if analytic is None:
            analytic = np.zeros_like(tensor.data)
        numeric = np.zeros_like(tensor.data)
        buf = tensor.data
        for ij in np.ndindex(buf.shape):
            orig = buf[ij]
            buf[ij] = orig + step
            f_plus = loss_fn().item()
            buf[ij] = orig - step
            f_minus = loss_fn().item()
            buf[ij] = orig
            numeric[ij] = (f_plus - f_minus) / (2.0 * step)
        rel = relative_error(analytic, numeric)
        records.append(GradRecord(name, analytic, numeric, float(rel.max())))
    return records
