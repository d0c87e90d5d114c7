"""Minimal dense-tensor reverse-mode autodiff on float64 numpy arrays.

A `Value` wraps an immutable float64 array plus the bookkeeping needed to
propagate gradients backwards through the graph that produced it. Only the
operations the shift/loss pipeline composes are provided; everything runs
single-threaded and deterministically.

Broadcast rule: shapes are aligned on trailing axes and size-1 axes stretch
(numpy semantics). Gradients of broadcast operands are summed back to the
original shape.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError

__all__ = [
    "Value",
    "as_value",
    "parameter",
    "matmul",
    "softmax",
    "relu",
    "exp",
    "scale",
    "vsum",
    "vmean",
    "reshape",
    "transpose",
    "take",
    "segment_mean_pool",
    "segment_broadcast",
    "cross_entropy",
    "backward",
    "zero_grad",
    "grad_check",
    "GradCheckReport",
]


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Value:
    """Node in the computation graph: float64 data, optional grad, parents."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op="value"):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, _op)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all real work happens in the module-level functions
    def __add__(self, other):
        return _elementwise_add(self, as_value(other))

    def __radd__(self, other):
        return _elementwise_add(as_value(other), self)

    def __sub__(self, other):
        return _elementwise_sub(self, as_value(other))

    def __rsub__(self, other):
        return _elementwise_sub(as_value(other), self)

    def __mul__(self, other):
        return _elementwise_mul(self, as_value(other))

    def __rmul__(self, other):
        return _elementwise_mul(as_value(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_value(other))


def as_value(x):
    """Wrap arrays/scalars as constant Values; pass Values through."""
    if isinstance(x, Value):
        return x
    return Value(np.asarray(x, dtype=np.float64))


def parameter(data, rng=None, shape=None):
    """Trainable leaf. Either wraps `data` or draws `shape` from `rng`."""
    if data is None:
        data = rng.standard_normal(shape)
    return Value(np.array(data, dtype=np.float64), requires_grad=True)


def _result(data, parents, backward_fn, op):
    needs = any(p.requires_grad for p in parents)
    return Value(
        data,
        requires_grad=needs,
        _parents=parents if needs else (),
        _backward=backward_fn if needs else None,
        _op=op,
    )


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcastable(sa, sb):
    try:
        np.broadcast_shapes(sa, sb)
        return True
    except ValueError:
        return False


def _binary(a, b, fwd, da, db, op):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")
    out_data = fwd(a.data, b.data)

    def backward_fn(g, out):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(da(g, out), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(db(g, out), b.shape))

    return _result(out_data, (a, b), backward_fn, op)


def _accumulate(node, g):
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _elementwise_add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, o: g, lambda g, o: g, "add")


def _elementwise_sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, o: g, lambda g, o: -g, "sub")


def _elementwise_mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, o: g * b.data, lambda g, o: g * a.data, "mul")


def scale(a, c):
    """Multiply by a Python scalar."""
    a = as_value(a)
    c = float(c)
    out_data = a.data * c

    def backward_fn(g, out):
        if a.requires_grad:
            _accumulate(a, g * c)

    return _result(out_data, (a,), backward_fn, "scale")


def relu(a):
    """max(x, 0); subgradient at 0 is 0."""
    a = as_value(a)
    mask = a.data > 0.0
    out_data = np.where(mask, a.data, 0.0)

    def backward_fn(g, out):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _result(out_data, (a,), backward_fn, "relu")


def exp(a):
    a = as_value(a)
    out_data = np.exp(a.data)
    _check_finite(out_data, "exp")

    def backward_fn(g, out):
        if a.requires_grad:
            _accumulate(a, g * out.data)

    return _result(out_data, (a,), backward_fn, "exp")


def matmul(a, b):
    """Matrix product of stacked matrices; batch axes broadcast."""
    a, b = as_value(a), as_value(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must have ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    if not _broadcastable(a.shape[:-2], b.shape[:-2]):
        raise ShapeError(f"matmul: batch dimensions disagree for {a.shape} and {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward_fn(g, out):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _result(out_data, (a, b), backward_fn, "matmul")


def softmax(a, axis):
    """Stable softmax along `axis`: outputs in (0,1), summing to 1.

    Max-subtraction keeps exp in range; outputs are floored at the smallest
    normal float so the open-interval codomain survives underflow for inputs
    spanning thousands in magnitude.
    """
    a = as_value(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = np.maximum(e / e.sum(axis=axis, keepdims=True), np.finfo(np.float64).tiny)

    def backward_fn(g, out):
        if a.requires_grad:
            y = out.data
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(a, y * (g - dot))

    return _result(out_data, (a,), backward_fn, "softmax")


def vsum(a, axis=None, keepdims=False):
    """Sum over `axis` (all axes when None)."""
    a = as_value(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g, out):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _accumulate(a, np.broadcast_to(gg, a.shape).copy())

    return _result(out_data, (a,), backward_fn, "sum")


def vmean(a, axis=None, keepdims=False):
    a = as_value(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_value(a)
    out_data = a.data.reshape(shape)

    def backward_fn(g, out):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _result(out_data, (a,), backward_fn, "reshape")


def transpose(a, axes):
    a = as_value(a)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g, out):
        if a.requires_grad:
            _accumulate(a, np.transpose(g, inverse))

    return _result(out_data, (a,), backward_fn, "transpose")


def take(a, indices, axis=0):
    """Select rows along `axis`; repeated indices accumulate gradient."""
    a = as_value(a)
    axis = axis % a.data.ndim
    idx = np.asarray(indices, dtype=np.intp)
    out_data = np.take(a.data, idx, axis=axis)

    def backward_fn(g, out):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            key = (slice(None),) * axis + (idx,)
            np.add.at(buf, key, g)
            _accumulate(a, buf)

    return _result(out_data, (a,), backward_fn, "take")


def _split_blocks(shape, seg):
    """Factor the last three axes of `shape` into (segments, block) pairs."""
    from .errors import ConfigError

    if len(shape) < 3:
        raise ShapeError(f"segment ops need >= 3 trailing axes, got shape {shape}")
    t, j, e = shape[-3:]
    ts, js, es = seg
    if ts <= 0 or js <= 0 or es <= 0:
        raise ConfigError(f"segment spec must be positive, got {tuple(seg)}")
    if t % ts or j % js or e % es:
        raise ConfigError(
            f"segment spec {tuple(seg)} does not divide trailing dims {(t, j, e)}"
        )
    return (ts, t // ts, js, j // js, es, e // es)


def segment_mean_pool(a, seg):
    """Mean over contiguous (T/T')x(J/J')x(E/E') blocks of the last 3 axes.

    Input (..., T, J, E) -> output (..., T', J', E'). The block layout is
    contiguous and T-major, so cell (a, b, c) pools frames
    [a*T/T', (a+1)*T/T') and likewise for joints and entities.
    """
    a = as_value(a)
    ts, bt, js, bj, es, be = _split_blocks(a.shape, seg)
    lead = a.shape[:-3]
    blocked = a.data.reshape(lead + (ts, bt, js, bj, es, be))
    out_data = blocked.mean(axis=(-5, -3, -1))
    inv = 1.0 / (bt * bj * be)

    def backward_fn(g, out):
        if a.requires_grad:
            gg = g.reshape(lead + (ts, 1, js, 1, es, 1)) * inv
            gg = np.broadcast_to(gg, lead + (ts, bt, js, bj, es, be))
            _accumulate(a, gg.reshape(a.shape).copy())

    return _result(out_data, (a,), backward_fn, "segment_mean_pool")


def segment_broadcast(a, block):
    """Repeat each cell of the last 3 axes over its contiguous block.

    Inverse layout of segment_mean_pool: input (..., T', J', E') with block
    sizes (bT, bJ, bE) -> output (..., T'*bT, J'*bJ, E'*bE).
    """
    a = as_value(a)
    if len(a.shape) < 3:
        raise ShapeError(f"segment_broadcast needs >= 3 trailing axes, got {a.shape}")
    bt, bj, be = block
    ts, js, es = a.shape[-3:]
    lead = a.shape[:-3]
    expanded = np.broadcast_to(
        a.data.reshape(lead + (ts, 1, js, 1, es, 1)),
        lead + (ts, bt, js, bj, es, be),
    )
    out_data = expanded.reshape(lead + (ts * bt, js * bj, es * be)).copy()

    def backward_fn(g, out):
        if a.requires_grad:
            gg = g.reshape(lead + (ts, bt, js, bj, es, be)).sum(axis=(-5, -3, -1))
            _accumulate(a, gg)

    return _result(out_data, (a,), backward_fn, "segment_broadcast")


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer `labels` under `logits` (N, K).

    Computed via log-sum-exp; safe for logits of any magnitude.
    """
    logits = as_value(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N, K) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= k:
        raise IndexError(f"label out of range [0, {k})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    picked = z[np.arange(n), labels]
    out_data = np.mean(lse - picked)

    def backward_fn(g, out):
        if logits.requires_grad:
            p = np.exp(z - m)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), labels] -= 1.0
            _accumulate(logits, g * p / n)

    return _result(out_data, (logits,), backward_fn, "cross_entropy")


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
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
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root):
    """Populate .grad on every requires_grad ancestor of a scalar `root`.

    Each node's local rule fires exactly once, in reverse topological order;
    repeated calls after zero_grad reproduce identical gradients.
    """
    root = as_value(root)
    if root.data.size != 1:
        raise ValueError(f"backward expects a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    _accumulate(root, np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad, node)


def zero_grad(values):
    for v in values:
        v.grad = None


class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    def __init__(self, max_rel_error, eps, tol, worst_index):
        self.max_rel_error = max_rel_error
        self.eps = eps
        self.tol = tol
        self.worst_index = worst_index
        self.passed = max_rel_error < tol

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, "
                f"eps={self.eps:g}, tol={self.tol:g})")


def grad_check(f, x, eps=1e-5, tol=1e-4):
    """Compare the analytic gradient of scalar f(x) against central differences.

    Per component: (f(x+eps e_i) - f(x-eps e_i)) / (2 eps). The reported
    relative error uses max(|analytic|, |numeric|, 1) as the denominator so
    near-zero gradients are judged on absolute error.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.asarray(x, dtype=np.float64)
    leaf = Value(x0.copy(), requires_grad=True)
    out = f(leaf)
    backward(out)
    analytic = np.zeros_like(x0) if leaf.grad is None else leaf.grad.copy()

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        bump = flat.copy()
        bump[i] = flat[i] + eps
        hi = float(f(Value(bump.reshape(x0.shape))).data)
        bump[i] = flat[i] - eps
        lo = float(f(Value(bump.reshape(x0.shape))).data)
        num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    return GradCheckReport(float(rel.max(initial=0.0)), eps, tol, worst)
