"""Minimal reverse-mode differentiation on float64 numpy arrays.

Every learnable quantity in the package is a :class:`Tensor`.  Operations on
tensors that require gradients are recorded as nodes pointing at their inputs;
:func:`backward` (or :func:`grad`) collects the nodes reachable from a scalar
loss into a :class:`ComputationRecord`, sorted by execution order, and replays
their vector-Jacobian products in reverse.

Elementwise binary ops follow numpy broadcasting; the backward pass sums the
broadcast axes away again.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComputationRecord",
    "tensor",
    "as_tensor",
    "no_grad",
    "backward",
    "grad",
    "grad_check",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "sum",
    "mean",
    "exp",
    "log",
    "sin",
    "cos",
    "sqrt",
    "square",
    "relu",
    "softplus",
    "sigmoid",
    "tanh",
    "softmax",
    "concat",
    "gather",
    "scatter",
    "reshape",
    "transpose",
    "index",
    "cumsum",
    "clip",
    "l2norm",
    "detach",
    "straight_through",
]

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_sequence = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording operations."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """Shape-carrying float64 array that can take part in differentiation."""

    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad", "grad", "name", "_op", "_parents", "_vjp", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._seq = next(_sequence)

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
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __neg__(self): return neg(self)
    def __getitem__(self, key): return index(self, key)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        if exponent == 0.5:
            return sqrt(self)
        raise ValueError(f"only exponents 2 and 0.5 are supported, got {exponent!r}")

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_sequence)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._op = op
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._op = op
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd, "mul", (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: denominator contains zeros")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out, "div", (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors (a 1-D right operand is a column)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 1:
        return _make(ad @ bd, "matmul", (a, b), lambda g: (np.outer(g, bd), ad.T @ g))
    return _make(ad @ bd, "matmul", (a, b), lambda g: (g @ bd.T, ad.T @ g))


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axes, keepdims=keepdims), "sum", (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ValueError(f"mean: empty reduction over shape {a.shape}")
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(a.data, axis=axis), "cumsum", (a,), vjp)


def l2norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    a = as_tensor(a)
    ad = a.data
    out = np.sqrt(np.sum(ad * ad, axis=axis, keepdims=True))
    safe = np.where(out > 0, out, 1.0)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.where(out > 0, gk * ad / safe, 0.0),)

    return _make(out if keepdims else np.squeeze(out, axis=axis), "l2norm", (a,), vjp)


# ---------------------------------------------------------------------------
# elementwise unary


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: input contains non-positive values")
    ad = a.data
    return _make(np.log(ad), "log", (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: input contains negative values")
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, "square", (a,), lambda g: (2.0 * g * ad,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.sin(ad), "sin", (a,), lambda g: (g * np.cos(ad),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.cos(ad), "cos", (a,), lambda g: (-g * np.sin(ad),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated stably for large |x|."""
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return _make(out, "softplus", (a,), lambda g: (g * _sigmoid(ad),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def softmax(a) -> Tensor:
    """Softmax over the last axis (max-shifted)."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _make(out, "softmax", (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * mask,))


def detach(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data)


def straight_through(forward_value: np.ndarray, surrogate: Tensor) -> Tensor:
    """Return ``forward_value`` in the forward pass and route gradients to ``surrogate``."""
    surrogate = as_tensor(surrogate)
    fv = np.asarray(forward_value, dtype=np.float64)
    if fv.shape != surrogate.shape:
        raise ValueError(f"straight_through: shapes {fv.shape} and {surrogate.shape} differ")
    return _make(fv.copy(), "straight_through", (surrogate,), lambda g: (g,))


# ---------------------------------------------------------------------------
# structural


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: no inputs")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ValueError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), "concat", tuple(ts), vjp)


def gather(a, idx) -> Tensor:
    """Select rows ``a[idx]`` along the first axis; repeated rows accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise IndexError(f"gather: index out of range for shape {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], "gather", (a,), vjp)


def scatter(values, idx, shape: Sequence[int]) -> Tensor:
    """Write ``values`` into rows ``idx`` of a zero tensor of ``shape`` (last write wins)."""
    values = as_tensor(values)
    idx = np.asarray(idx, dtype=np.int64)
    shape = tuple(shape)
    out = np.zeros(shape)
    expected = idx.shape + shape[1:]
    if values.shape != expected:
        raise ValueError(f"scatter: values shape {values.shape} does not match {expected}")
    out[idx] = values.data
    # overwritten writes did not reach the output and get no gradient
    flat = idx.reshape(-1)
    _, rev_first = np.unique(flat[::-1], return_index=True)
    winner = np.zeros(flat.shape, dtype=bool)
    winner[flat.size - 1 - rev_first] = True
    winner = winner.reshape(idx.shape + (1,) * (len(shape) - 1))

    return _make(out, "scatter", (values,), lambda g: (np.where(winner, g[idx], 0.0),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _make(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, "transpose", (a,), lambda g: (g.T,))


def index(a, key) -> Tensor:
    """Basic/advanced numpy indexing with scatter-add backward."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _make(a.data[key], "index", (a,), vjp)


# ---------------------------------------------------------------------------
# backward


class ComputationRecord:
    """Recorded operations reachable from an output, in execution order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> ComputationRecord:
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._vjp is not None:
                nodes.append(t)
                stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    @property
    def ops(self) -> list[str]:
        return [t._op for t in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self, out: Tensor, seed: np.ndarray) -> dict[int, np.ndarray]:
        """Propagate ``seed`` = d(loss)/d(out) backwards; returns grads keyed by tensor id.

        Contributions to a tensor are summed in the execution order of the ops
        that consumed it, so the gradient of a sum of losses equals the sum of
        their gradients bit for bit.
        """
        pending: dict[int, list[tuple[int, np.ndarray]]] = {id(out): [(0, seed)]}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            parts = pending.pop(id(node), None)
            if parts is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(_total(parts))):
                if not parent.requires_grad:
                    continue
                pending.setdefault(id(parent), []).append((node._seq, pg))
                if parent._vjp is None:
                    leaves[id(parent)] = parent
        return {k: _total(pending[k]) for k in leaves if k in pending}


def _total(parts: list[tuple[int, np.ndarray]]) -> np.ndarray:
    # parts arrive in reverse consumer order; stable sort keeps x*x's two terms in parent order
    parts = sorted(parts, key=lambda item: item[0])
    acc = parts[0][1]
    for _, g in parts[1:]:
        acc = acc + g
    return acc


def _check_loss(loss: Tensor) -> None:
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise ValueError("backward: loss is not finite")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every contributing leaf."""
    _check_loss(loss)
    if loss.requires_grad and loss._vjp is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    record = ComputationRecord.from_output(loss)
    leaves = {id(p): p for n in record.nodes for p in n._parents if p._vjp is None}
    grads = record.replay(loss, np.ones_like(loss.data))
    for key, g in grads.items():
        leaf = leaves[key]
        g = g.reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def grad(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. ``params``; zeros for params off the graph.

    Unlike :func:`backward` this leaves ``.grad`` untouched.
    """
    _check_loss(loss)
    params = list(params)
    if loss._vjp is None:
        return [np.ones_like(p.data) if p is loss else np.zeros_like(p.data) for p in params]
    record = ComputationRecord.from_output(loss)
    grads = record.replay(loss, np.ones_like(loss.data))
    return [grads[id(p)].reshape(p.shape) if id(p) in grads else np.zeros_like(p.data) for p in params]


def grad_check(function: Callable[..., Tensor], point, step: float = 1e-5) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|) over all coordinates.

    ``point`` is a tensor or a sequence of tensors; ``function`` is called with
    them as positional arguments.  Their data is perturbed in place and restored.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    pts = [point] if isinstance(point, Tensor) else list(point)
    saved = [(p.requires_grad, p.data.copy()) for p in pts]
    for p in pts:
        p.requires_grad = True
        p.data = np.ascontiguousarray(p.data)

    def evaluate() -> float:
        with no_grad():
            val = function(*pts)
        v = float(np.asarray(val.data).reshape(-1)[0])
        if not np.isfinite(v):
            raise ValueError("grad_check: function returned a non-finite value")
        return v

    try:
        loss = function(*pts)
        _check_loss(loss)
        analytic = grad(loss, pts)
        worst = 0.0
        for p, a in zip(pts, analytic):
            flat = p.data.reshape(-1)
            aflat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = evaluate()
                flat[i] = orig - step
                down = evaluate()
                flat[i] = orig
                fd = (up - down) / (2.0 * step)
                err = abs(aflat[i] - fd) / max(1.0, abs(aflat[i]))
                worst = max(worst, err)
        return worst
    finally:
        for p, (rg, data) in zip(pts, saved):
            p.requires_grad = rg
            p.data[...] = data
