"""Small dense-tensor engine with reverse-mode gradients.

Every model component is written against :class:`Tensor` and the functions in
this module.  Shapes never broadcast implicitly: element-wise binary ops need
equal shapes, except that the right operand may be a vector matching the last
axis (bias-style).  Anything else goes through :func:`broadcast_to`.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

MASK_LOGIT = -1e9
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the backward graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, op="leaf"):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def _check_finite(data, op):
    # a finite sum implies finite entries; the full scan only runs when it is not
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.sum(data)
    if not np.isfinite(total) and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by operation '{op}'")


def _node(data, op, parents, backward_fn):
    _check_finite(data, op)
    out = Tensor(data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def _const(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), op="const")


def _operands(a, b):
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        return _const(a, b.data.dtype), b
    a = _const(a, np.float64)
    return a, _const(b, a.data.dtype)


def _binary_shapes(a, b, op):
    """Classify the operand shapes: 'same', 'bias' or 'scalar'."""
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "scalar"
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        return "bias"
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, kind, shape):
    if kind == "same":
        return g
    if kind == "bias":
        return g.reshape(-1, shape[0]).sum(axis=0)
    return np.asarray(g.sum())


# ----------------------------------------------------------------------------
# element-wise arithmetic
# ----------------------------------------------------------------------------


def add(a, b):
    a, b = _operands(a, b)
    if a.ndim == 0 and b.ndim > 0:
        a, b = b, a
    kind = _binary_shapes(a, b, "add")

    def bw(g):
        return g, _reduce_to(g, kind, b.shape)

    return _node(a.data + b.data, "add", (a, b), bw)


def neg(a):
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def sub(a, b):
    b = _const(b, a.data.dtype)
    return add(a, neg(b))


def mul(a, b):
    a, b = _operands(a, b)
    if a.ndim == 0 and b.ndim > 0:
        a, b = b, a
    kind = _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return g * bd, _reduce_to(g * ad, kind, b.shape)

    return _node(ad * bd, "mul", (a, b), bw)


def div(a, b):
    b = _const(b, a.data.dtype)
    if b.shape != a.shape and b.ndim != 0:
        raise DimensionError(f"div: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        gb = -g * out / bd
        return g / bd, gb if b.ndim else np.asarray(gb.sum())

    return _node(out, "div", (a, b), bw)


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, "exp", (a,), lambda g: (g * out,))


def log(a):
    x = a.data
    if np.any(x <= 0):
        raise NumericError("non-finite values produced by operation 'log'")
    return _node(np.log(x), "log", (a,), lambda g: (g / x,))


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    """Logistic function evaluated in the sign-split stable form."""
    out = _sigmoid_np(a.data)
    return _node(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * x2 * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _node(out, "gelu", (a,), bw)


def relu(a):
    x = a.data
    return _node(np.maximum(x, 0.0), "relu", (a,), lambda g: (g * (x > 0),))


def abs_(a):
    x = a.data
    return _node(np.abs(x), "abs", (a,), lambda g: (g * np.sign(x),))


def huber(a, delta):
    """Element-wise Huber penalty of the residual tensor ``a``."""
    e = a.data
    small = np.abs(e) <= delta
    out = np.where(small, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))

    def bw(g):
        return (g * np.where(small, e, delta * np.sign(e)),)

    return _node(out, "huber", (a,), bw)


def clip(a, lo, hi):
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _node(np.clip(x, lo, hi), "clip", (a,), lambda g: (g * inside,))


# ----------------------------------------------------------------------------
# linear algebra and reductions
# ----------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product over the last two axes.

    ``b`` is either a plain matrix shared across the leading axes of ``a`` or a
    stack with exactly the same leading axes.
    """
    if b.ndim < 2 or a.ndim < 1 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and (a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]):
        raise DimensionError(f"matmul: batch shapes differ, {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    with np.errstate(over="ignore", invalid="ignore"):
        out = ad @ bd

    def bw(g):
        if bd.ndim == 2:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            return g @ bd.T, gb
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _node(out, "matmul", (a, b), bw)


def sum_(a, axis=None, keepdims=False):
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), "sum", (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def softmax_rows(x, mask=None):
    """Softmax along the last axis.

    ``mask`` is an optional boolean array (broadcastable to ``x``) marking the
    admissible keys; excluded keys get an additive logit of ``MASK_LOGIT``.
    """
    z = x.data
    if mask is not None:
        z = z + np.where(mask, 0.0, MASK_LOGIT).astype(z.dtype)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, "softmax", (x,), bw)


def layer_norm(x, gain, bias, eps=1e-5):
    d = x.shape[-1]
    if x.ndim < 1 or d < 2:
        raise DimensionError(f"layer_norm: need at least 2 features, got shape {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias shapes {gain.shape}, {bias.shape} for width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).reshape(-1, d).sum(axis=0), g.reshape(-1, d).sum(axis=0)

    return _node(out, "layer_norm", (x, gain, bias), bw)


def cumprod(x):
    """Cumulative product along the last axis (division-free backward)."""
    xd = x.data
    out = np.cumprod(xd, axis=-1)

    def bw(g):
        n = xd.shape[-1]
        prefix = np.ones_like(xd)
        prefix[..., 1:] = out[..., :-1]
        r = np.empty_like(xd)
        r[..., n - 1] = g[..., n - 1]
        for k in range(n - 2, -1, -1):
            r[..., k] = g[..., k] + xd[..., k + 1] * r[..., k + 1]
        return (prefix * r,)

    return _node(out, "cumprod", (x,), bw)


# ----------------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------------


def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), "transpose", (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape):
    """Explicit broadcast; the backward pass sums over the expanded axes."""
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: cannot expand {src} to {tuple(shape)}") from exc

    def bw(g):
        lead = g.ndim - len(src)
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, s in enumerate(src) if s == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _node(out, "broadcast_to", (a,), bw)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]}") from exc
    return _node(out, "concat", tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: shapes {[t.shape for t in tensors]}") from exc
    n = len(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _node(out, "stack", tuple(tensors), bw)


def slice_(a, idx):
    shape, dtype = a.shape, a.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] += g
        return (full,)

    return _node(a.data[idx], "slice", (a,), bw)


def take(table, idx):
    """Row lookup: ``table[idx]`` for an integer index array of any shape."""
    idx = np.asarray(idx, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(f"take: index out of range for table of shape {table.shape}")
    shape = table.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx.ravel(), g.reshape(-1, shape[1]))
        return (full,)

    return _node(table.data[idx], "take", (table,), bw)


# ----------------------------------------------------------------------------
# parameters and gradients
# ----------------------------------------------------------------------------


class ParameterStore:
    """Named learnable tensors, iterated in lexicographic name order."""

    def __init__(self, rng_seed=0, dtype=np.float64):
        self.rng_seed = int(rng_seed)
        self.dtype = np.dtype(dtype)
        self.entries: dict[str, Tensor] = {}

    def add(self, name, value):
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=self.dtype)
        _check_finite(value, f"parameter {name}")
        t = Tensor(value, requires_grad=True, name=name)
        self.entries[name] = t
        return t

    def __getitem__(self, name):
        return self.entries[name]

    def __contains__(self, name):
        return name in self.entries

    def __len__(self):
        return len(self.entries)

    def names(self):
        return sorted(self.entries)

    def items(self):
        return [(n, self.entries[n]) for n in self.names()]

    def arrays(self):
        return {n: t.data for n, t in self.items()}

    def n_values(self):
        return int(sum(t.data.size for t in self.entries.values()))

    def copy(self):
        other = ParameterStore(self.rng_seed, self.dtype)
        for n, t in self.items():
            other.add(n, t.data.copy())
        return other


def _topological(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss, store=None):
    """Gradient of a scalar ``loss`` with respect to every parameter.

    Returns a dict ``name -> ndarray``; parameters the loss does not touch get
    zero gradients.  Without a ``store`` only named leaves reached by the graph
    are reported.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {}
    leaf_grads = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topological(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                leaf_grads[id(node)] = (node, g)
                continue
            # overflow surfaces as a NumericError below, not as a warning
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if not parent.requires_grad or pg is None:
                    continue
                _check_finite(pg, f"{node.op} (backward)")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if store is None:
        return {n.name: g for n, g in leaf_grads.values() if n.name is not None}
    out = {}
    for name, t in store.items():
        hit = leaf_grads.get(id(t))
        out[name] = hit[1].reshape(t.shape) if hit is not None else np.zeros_like(t.data)
    return out


@dataclass
class GradReport:
    max_rel_err: dict = field(default_factory=dict)
    worst_index: dict = field(default_factory=dict)
    tol: float = 1e-4
    passed: bool = True

    @property
    def overall(self):
        return max(self.max_rel_err.values(), default=0.0)

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return f"gradcheck {status}: max relative error {self.overall:.3e} (tol {self.tol:.0e})"


def grad_check(loss_fn, store, step=1e-4, tol=1e-4, grads=None, max_elements=64, seed=0, eps_den=1e-8):
    """Compare analytic gradients with central finite differences.

    ``loss_fn(store)`` must return a scalar :class:`Tensor` or float.  Tensors
    larger than ``max_elements`` are probed on a seeded random subsample.
    Pass ``grads`` to check a supplied gradient instead of :func:`backward`.
    """
    if grads is None:
        grads = backward(loss_fn(store), store)
    rng = np.random.default_rng(seed)
    report = GradReport(tol=tol)

    def probe():
        with no_grad():
            val = loss_fn(store)
        val = float(val.data) if isinstance(val, Tensor) else float(val)
        if not math.isfinite(val):
            raise NumericError("non-finite loss at a finite-difference probe point")
        return val

    for name, t in store.items():
        flat = t.data.reshape(-1)
        if flat.size <= max_elements:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        analytic = grads[name].reshape(-1)
        worst, worst_at = 0.0, None
        for k in picks:
            orig = flat[k]
            flat[k] = orig + step
            f_plus = probe()
            flat[k] = orig - step
            f_minus = probe()
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2 * step)
            a = analytic[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), eps_den)
            if err > worst or worst_at is None:
                worst, worst_at = err, np.unravel_index(k, t.shape)
        report.max_rel_err[name] = float(worst)
        report.worst_index[name] = tuple(int(i) for i in worst_at) if worst_at is not None else ()
    report.passed = report.overall <= tol
    return report
