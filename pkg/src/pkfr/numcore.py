"""Reverse-mode automatic differentiation over dense numpy arrays.

The graph is rebuilt per forward pass (define-by-run). Every operation goes
through a registry of primitives; each primitive computes its output eagerly
and returns a VJP closure used by ``backward``.

Primitive kinds: matmul, add, sub, mul, concat, split, reshape, transpose,
softmax, layernorm, silu, tanh, exp, log, square, mean, sum, clip,
max_scalar, plus two extra plumbing kinds (minimum, neg) used by the clipped
policy objective.

Two precisions are supported: float32 for training throughput and float64
for all finite-difference checks (f32 is too coarse for reliable central
differences).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRAIN_DTYPE = np.float32
TEST_DTYPE = np.float64

LAYERNORM_EPS = 1e-5  # fixed constant so oracles stay reproducible

# When True, every primitive asserts its output is finite given finite
# inputs. Enabled by tests; off by default for speed.
DEBUG_CHECK_FINITE = False


class ShapeError(ValueError):
    """Operand shapes incompatible with a primitive's shape rule."""


class UnsupportedOpError(ValueError):
    """Unknown primitive kind."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class Tensor:
    """A node in the autodiff graph: cached output plus gradient accumulator.

    Leaves are created directly from data; interior nodes are created by
    ``apply_primitive``. ``grad`` is allocated lazily and zero-initialized at
    the start of each backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_vjp")

    def __init__(self, data, requires_grad=False, dtype=None, op="leaf", parents=()):
        if isinstance(data, Tensor):
            raise ContractError("wrap raw array data, not another Tensor")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(TRAIN_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._vjp = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, dtype={self.dtype})"

    # -- operator sugar ----------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return apply_primitive("add", [self, self._coerce(other)])

    def __radd__(self, other):
        return apply_primitive("add", [self._coerce(other), self])

    def __sub__(self, other):
        return apply_primitive("sub", [self, self._coerce(other)])

    def __rsub__(self, other):
        return apply_primitive("sub", [self._coerce(other), self])

    def __mul__(self, other):
        return apply_primitive("mul", [self, self._coerce(other)])

    def __rmul__(self, other):
        return apply_primitive("mul", [self._coerce(other), self])

    def __neg__(self):
        return apply_primitive("neg", [self])

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def reshape(self, shape):
        return apply_primitive("reshape", [self], shape=tuple(shape))

    def transpose(self, axes=None):
        return apply_primitive("transpose", [self], axes=axes)

    def sum(self, axis=None, keepdims=False):
        return apply_primitive("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply_primitive("mean", [self], axis=axis, keepdims=keepdims)

    def exp(self):
        return apply_primitive("exp", [self])

    def log(self):
        return apply_primitive("log", [self])

    def tanh(self):
        return apply_primitive("tanh", [self])

    def silu(self):
        return apply_primitive("silu", [self])

    def square(self):
        return apply_primitive("square", [self])

    def clip(self, lo, hi):
        return apply_primitive("clip", [self], lo=lo, hi=hi)

    def max_scalar(self, s):
        return apply_primitive("max_scalar", [self], s=s)

    # -- backward ----------------------------------------------------------

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False, dtype=None):
    """Convenience leaf constructor."""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=TRAIN_DTYPE, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_same_dtype(inputs, kind):
    d0 = inputs[0].data.dtype
    for t in inputs[1:]:
        if t.data.dtype != d0:
            raise ContractError(
                f"{kind}: mixed precisions {d0} and {t.data.dtype}; cast explicitly"
            )


def _fw_matmul(inputs, attrs):
    a, b = inputs
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner axes differ, {a.shape[-1]} (last axis of {a.shape}) vs "
            f"{b.shape[-2]} (second-to-last axis of {b.shape})"
        )
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return out, vjp


def _fw_add(inputs, attrs):
    a, b = inputs
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return out, vjp


def _fw_sub(inputs, attrs):
    a, b = inputs
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return out, vjp


def _fw_mul(inputs, attrs):
    a, b = inputs
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return out, vjp


def _fw_neg(inputs, attrs):
    (a,) = inputs

    def vjp(g):
        return (-g,)

    return -a.data, vjp


def _fw_concat(inputs, attrs):
    axis = attrs.get("axis", -1)
    base = inputs[0].ndim
    for t in inputs[1:]:
        if t.ndim != base:
            raise ShapeError(f"concat: rank mismatch {inputs[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in inputs], axis=axis)
    sizes = [t.shape[axis] for t in inputs]

    def vjp(g):
        splits = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(splits)

    return out, vjp


def _fw_reshape(inputs, attrs):
    (a,) = inputs
    shape = attrs["shape"]
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return out, vjp


def _fw_transpose(inputs, attrs):
    (a,) = inputs
    axes = attrs.get("axes")
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return out, vjp


def _fw_softmax(inputs, attrs):
    (a,) = inputs
    # per-row max subtraction for overflow safety
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return out, vjp


def _fw_layernorm(inputs, attrs):
    (a,) = inputs
    if a.shape[-1] < 2:
        raise ShapeError(f"layernorm: last axis must have >=2 entries, got {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    out = xc * inv

    def vjp(g):
        gy = g * inv
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * out).mean(axis=-1, keepdims=True)
        return (gy - m1 - out * m2,)

    return out, vjp


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fw_silu(inputs, attrs):
    (a,) = inputs
    sig = _sigmoid(a.data)
    out = a.data * sig

    def vjp(g):
        return (g * (sig + a.data * sig * (1.0 - sig)),)

    return out, vjp


def _fw_tanh(inputs, attrs):
    (a,) = inputs
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return out, vjp


def _fw_exp(inputs, attrs):
    (a,) = inputs
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return out, vjp


def _fw_log(inputs, attrs):
    (a,) = inputs
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return out, vjp


def _fw_square(inputs, attrs):
    (a,) = inputs
    out = a.data * a.data

    def vjp(g):
        return (g * 2.0 * a.data,)

    return out, vjp


def _reduce_vjp_shape(a, axis, keepdims, g):
    if axis is None:
        return np.broadcast_to(g, a.shape)
    ax = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        g = np.expand_dims(g, ax)
    return np.broadcast_to(g, a.shape)


def _fw_sum(inputs, attrs):
    (a,) = inputs
    axis = attrs.get("axis")
    keepdims = attrs.get("keepdims", False)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        return (_reduce_vjp_shape(a, axis, keepdims, g).copy(),)

    return out, vjp


def _fw_mean(inputs, attrs):
    (a,) = inputs
    axis = attrs.get("axis")
    keepdims = attrs.get("keepdims", False)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else np.prod(
        [a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        return (_reduce_vjp_shape(a, axis, keepdims, g) / count,)

    return out, vjp


def _fw_clip(inputs, attrs):
    (a,) = inputs
    lo, hi = attrs["lo"], attrs["hi"]
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def vjp(g):
        return (g * inside,)

    return out, vjp


def _fw_max_scalar(inputs, attrs):
    (a,) = inputs
    s = attrs["s"]
    out = np.maximum(a.data, s)
    active = a.data > s

    def vjp(g):
        return (g * active,)

    return out, vjp


def _fw_minimum(inputs, attrs):
    a, b = inputs
    if a.shape != b.shape:
        raise ShapeError(f"minimum: shapes differ {a.shape} vs {b.shape}")
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return g * take_a, g * (~take_a)

    return out, vjp


PRIMITIVES = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "sub": _fw_sub,
    "mul": _fw_mul,
    "neg": _fw_neg,
    "concat": _fw_concat,
    "reshape": _fw_reshape,
    "transpose": _fw_transpose,
    "softmax": _fw_softmax,
    "layernorm": _fw_layernorm,
    "silu": _fw_silu,
    "tanh": _fw_tanh,
    "exp": _fw_exp,
    "log": _fw_log,
    "square": _fw_square,
    "sum": _fw_sum,
    "mean": _fw_mean,
    "clip": _fw_clip,
    "max_scalar": _fw_max_scalar,
    "minimum": _fw_minimum,
}


def apply_primitive(kind, inputs, **attrs):
    """Apply a registered primitive to input nodes, recording the VJP.

    Raises ``UnsupportedOpError`` for unknown kinds and ``ShapeError`` when
    operand shapes violate the kind's shape rule.
    """
    if kind == "split":
        return split(inputs[0], attrs["sections"], axis=attrs.get("axis", -1))
    fw = PRIMITIVES.get(kind)
    if fw is None:
        raise UnsupportedOpError(f"unknown primitive kind {kind!r}")
    if len(inputs) > 1:
        _check_same_dtype(inputs, kind)
    out_data, vjp = fw(inputs, attrs)
    if DEBUG_CHECK_FINITE:
        if all(np.isfinite(t.data).all() for t in inputs) and not np.isfinite(out_data).all():
            raise FloatingPointError(f"{kind}: non-finite output from finite inputs")
    out = Tensor(
        out_data,
        requires_grad=any(t.requires_grad for t in inputs),
        op=kind,
        parents=tuple(inputs),
    )
    out._vjp = vjp
    return out


def split(t, sections, axis=-1):
    """Split a node into `sections` equal parts along `axis`.

    Returns a tuple of nodes; each routes its gradient into the matching
    slice of the parent.
    """
    ax = axis if axis >= 0 else t.ndim + axis
    if t.shape[ax] % sections != 0:
        raise ShapeError(
            f"split: axis {ax} of length {t.shape[ax]} not divisible by {sections}"
        )
    pieces = np.split(t.data, sections, axis=ax)
    outs = []
    width = t.shape[ax] // sections
    for i, piece in enumerate(pieces):
        o = Tensor(piece, requires_grad=t.requires_grad, op="split", parents=(t,))
        start = i * width

        def make_vjp(start=start):
            def vjp(g):
                full = np.zeros(t.shape, dtype=g.dtype)
                sl = [slice(None)] * t.ndim
                sl[ax] = slice(start, start + width)
                full[tuple(sl)] = g
                return (full,)

            return vjp

        o._vjp = make_vjp()
        outs.append(o)
    return tuple(outs)


def concat(tensors, axis=-1):
    return apply_primitive("concat", list(tensors), axis=axis)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Accumulate dLoss/dLeaf into every reachable leaf's ``grad``.

    ``loss`` must be scalar-shaped. When ``params`` is given, returns a list
    of gradient arrays aligned with it; parameters not reachable from the
    loss get zeros.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar-shaped, got shape {loss.shape}")
    order = _toposort(loss)
    # zero gradient accumulators for every node in this graph
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not (parent.requires_grad or parent.parents):
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            np.add(parent.grad, g.astype(parent.data.dtype, copy=False), out=parent.grad)
    if params is not None:
        out = []
        for p in params:
            out.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        return out
    return None


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst_param: int = -1
    worst_coord: int = -1
    checked_coords: int = 0

    def __bool__(self):
        return self.passed


def grad_check(f, params, step=1e-5, tol=1e-6, max_coords=10000, seed=0):
    """Compare ``backward`` gradients of ``f(params)`` against central
    finite differences, coordinate by coordinate.

    ``f`` must be deterministic for fixed params (freeze all sampling) and
    the params should be float64; f32 finite differences are unreliable.
    Above ``max_coords`` total coordinates, a seeded subsample is checked.
    """
    for p in params:
        p.requires_grad = True
    loss = f(params)
    analytic = backward(loss, params=params)

    coords = []
    for i, p in enumerate(params):
        for j in range(p.size):
            coords.append((i, j))
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in idx]

    max_rel = 0.0
    worst = (-1, -1)
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        f_plus = f(params)
        flat[j] = orig - step
        f_minus = f(params)
        flat[j] = orig
        if not (np.isfinite(f_plus.data).all() and np.isfinite(f_minus.data).all()):
            return GradCheckReport(
                max_rel_err=np.inf, passed=False, worst_param=i, worst_coord=j,
                checked_coords=len(coords),
            )
        numeric = (float(f_plus.data) - float(f_minus.data)) / (2.0 * step)
        a = float(analytic[i].reshape(-1)[j])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        if rel > max_rel:
            max_rel = rel
            worst = (i, j)
    return GradCheckReport(
        max_rel_err=max_rel,
        passed=max_rel < tol,
        worst_param=worst[0],
        worst_coord=worst[1],
        checked_coords=len(coords),
    )
