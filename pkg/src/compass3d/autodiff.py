"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Values are numpy float64 arrays wrapped in :class:`DiffValue` nodes. Each
operation records its parents and a backward closure; :func:`backward`
walks the graph once in reverse topological order and then frees it.
Broadcasting is restricted to bias addition, row scaling and size-1
(scalar) operands; everything else requires exact shape matches so shape
bugs surface immediately.

Training math is 64-bit throughout so the finite-difference verifier
(:func:`finite_diff_check`) is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# When on, every op output is scanned for NaN/Inf and raises on the first
# non-finite value. Costs a few percent at desk scale; left on by default.
FINITE_CHECKS = True

PARAM_GROUP_NAMES = ("ici", "bcr", "text_encoder", "backbone", "head")

# Optional instrumentation: when set to a `set`, every op records the
# names of parameter leaves it consumes (used by the inference-purity check).
_PARAM_TOUCH_LOG: set | None = None


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


def _as_array(x) -> np.ndarray:
    # order="C" keeps rank-0 arrays rank 0, unlike ascontiguousarray
    return np.asarray(x, dtype=np.float64, order="C")


class DiffValue:
    """A node in the differentiable graph: value + lazily allocated grad."""

    __slots__ = ("value", "grad", "name", "is_param", "requires_grad",
                 "_parents", "_backward", "_grad_owned")

    def __init__(self, value, parents=(), backward=None, name=None, is_param=False):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        self.name = name
        self.is_param = is_param
        self._parents: tuple = tuple(parents)
        self._backward = backward
        self._grad_owned = False
        self.requires_grad = is_param or any(p.requires_grad for p in self._parents)

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffValue(shape={self.value.shape}{tag})"

    # Elementwise sugar (same-shape or size-1 operand, per module contract).
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(constant(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else DiffValue(x)


def parameter(x, name: str) -> DiffValue:
    return DiffValue(x, name=name, is_param=True)


@dataclass
class ParamGroup:
    """Named parameter collection with its own learning rate and clip norm."""

    name: str
    params: list = field(default_factory=list)
    lr: float = 1e-3
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.name not in PARAM_GROUP_NAMES:
            raise ValueError(f"unknown param group name {self.name!r}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")


def _check_finite(arr: np.ndarray, opname: str):
    if FINITE_CHECKS and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by op {opname!r}")


def _node(value: np.ndarray, parents, backward, opname: str) -> DiffValue:
    _check_finite(value, opname)
    if _PARAM_TOUCH_LOG is not None:
        for p in parents:
            if p.is_param and p.name is not None:
                _PARAM_TOUCH_LOG.add(p.name)
    if not any(p.requires_grad for p in parents):
        return DiffValue(value)  # constant-only subgraph, no tape needed
    return DiffValue(value, parents=parents, backward=backward)


def _acc(node: DiffValue, g: np.ndarray):
    # First contribution is stored by reference for interior nodes (their
    # grads are finalized before use); parameters always own a copy since
    # the optimizer mutates grads in place. Second contributions allocate
    # once, after which accumulation is in place.
    if node.grad is None:
        if node.is_param:
            node.grad = np.array(g, dtype=np.float64)
            node._grad_owned = True
        else:
            node.grad = g
            node._grad_owned = False
    elif node._grad_owned:
        node.grad += g
    else:
        node.grad = node.grad + g
        node._grad_owned = True


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand shape (size-1 only)."""
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops


def _binary(a, b, fwd, bwd_a, bwd_b, opname):
    a, b = constant(a), constant(b)
    if a.value.shape != b.value.shape and a.value.size != 1 and b.value.size != 1:
        raise ValueError(f"{opname}: shape mismatch {a.value.shape} vs {b.value.shape}")
    out = fwd(a.value, b.value)

    def backward(node):
        g = node.grad
        if a.requires_grad:
            _acc(a, _reduce_to(bwd_a(g, a.value, b.value, node.value), a.value.shape))
        if b.requires_grad:
            _acc(b, _reduce_to(bwd_b(g, a.value, b.value, node.value), b.value.shape))

    return _node(out, (a, b), backward, opname)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g, "add")


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g, "sub")


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x, "mul")


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y), "div")


def _unary(x, fwd, bwd, opname):
    x = constant(x)
    out = fwd(x.value)

    def backward(node):
        _acc(x, bwd(node.grad, x.value, node.value))

    return _node(out, (x,), backward, opname)


def neg(x):
    return _unary(x, lambda v: -v, lambda g, v, o: -g, "neg")


def exp(x):
    return _unary(x, np.exp, lambda g, v, o: g * o, "exp")


def log(x):
    return _unary(x, np.log, lambda g, v, o: g / v, "log")


def sqrt(x):
    return _unary(x, np.sqrt, lambda g, v, o: g * 0.5 / o, "sqrt")


def tanh(x):
    return _unary(x, np.tanh, lambda g, v, o: g * (1.0 - o * o), "tanh")


def sigmoid(x):
    return _unary(x, _sigmoid_np, lambda g, v, o: g * o * (1.0 - o), "sigmoid")


def softplus(x):
    """log(1 + exp(x)), overflow-safe."""
    return _unary(x, lambda v: np.logaddexp(0.0, v),
                  lambda g, v, o: g * _sigmoid_np(v), "softplus")


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    # exp(-v) overflowing to inf still yields the correct 0.0 limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-v))


def abs_(x):
    return _unary(x, np.abs, lambda g, v, o: g * np.sign(v), "abs")


def pow_const(x, p: float):
    if p == 2.0:
        return _unary(x, np.square, lambda g, v, o: g * 2.0 * v, "pow2")
    return _unary(x, lambda v: np.power(v, p),
                  lambda g, v, o: g * p * np.power(v, p - 1.0), "pow_const")


def clip_const(x, lo: float, hi: float):
    """Clamp with zero gradient outside [lo, hi]."""
    def bwd(g, v, o):
        return g * ((v >= lo) & (v <= hi))

    return _unary(x, lambda v: np.clip(v, lo, hi), bwd, "clip")


def maximum_const(x, floor: float):
    """Elementwise max with a constant; gradient passes where x > floor."""
    return _unary(x, lambda v: np.maximum(v, floor),
                  lambda g, v, o: g * (v > floor), "maximum_const")


# ---------------------------------------------------------------------------
# structural / linear-algebra ops


def matmul(a, b) -> DiffValue:
    """Standard 2-D matrix product, differentiable w.r.t. both inputs."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError(f"matmul: expected 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul: shape mismatch {av.shape} x {bv.shape}")
    out = av @ bv

    def backward(node):
        g = node.grad
        if a.requires_grad:
            _acc(a, g @ bv.T)
        if b.requires_grad:
            _acc(b, av.T @ g)

    return _node(out, (a, b), backward, "matmul")


def transpose(x) -> DiffValue:
    x = constant(x)
    out = np.ascontiguousarray(x.value.T)

    def backward(node):
        _acc(x, node.grad.T)

    return _node(out, (x,), backward, "transpose")


def reshape(x, shape) -> DiffValue:
    x = constant(x)
    out = x.value.reshape(shape)

    def backward(node):
        _acc(x, node.grad.reshape(x.value.shape))

    return _node(np.ascontiguousarray(out), (x,), backward, "reshape")


def add_bias(x, b) -> DiffValue:
    """Row-wise bias addition: (N, D) + (D,). The one sanctioned broadcast."""
    x, b = constant(x), constant(b)
    if x.value.ndim != 2 or b.value.ndim != 1 or x.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"add_bias: bad shapes {x.value.shape} + {b.value.shape}")
    out = x.value + b.value[None, :]

    def backward(node):
        if x.requires_grad:
            _acc(x, node.grad)
        if b.requires_grad:
            _acc(b, node.grad.sum(axis=0))

    return _node(out, (x, b), backward, "add_bias")


def scale_rows(x, s) -> DiffValue:
    """Multiply each row of x (N, D) by the matching entry of s (N, 1)."""
    x, s = constant(x), constant(s)
    if x.value.ndim != 2 or s.value.shape != (x.value.shape[0], 1):
        raise ValueError(f"scale_rows: bad shapes {x.value.shape}, {s.value.shape}")
    out = x.value * s.value

    def backward(node):
        g = node.grad
        if x.requires_grad:
            _acc(x, g * s.value)
        if s.requires_grad:
            _acc(s, (g * x.value).sum(axis=1, keepdims=True))

    return _node(out, (x, s), backward, "scale_rows")


def _scatter_add_rows(out: np.ndarray, idx: np.ndarray, rows: np.ndarray):
    """out[idx[i]] += rows[i], deterministic (sorted reduceat)."""
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    starts = np.flatnonzero(np.diff(sorted_idx, prepend=sorted_idx[0] - 1))
    sums = np.add.reduceat(rows[order], starts, axis=0)
    out[sorted_idx[starts]] += sums


def take_rows(x, idx) -> DiffValue:
    x = constant(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = x.value[idx]

    def backward(node):
        g = np.zeros_like(x.value)
        _scatter_add_rows(g, idx, node.grad)
        _acc(x, g)

    return _node(out, (x,), backward, "take_rows")


def group_mean(x, idx) -> DiffValue:
    """Mean-pool rows of x over each row of index matrix idx (G, M)."""
    x = constant(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 2:
        raise ValueError("group_mean: idx must be (G, M)")
    m = idx.shape[1]
    out = x.value[idx.ravel()].reshape(idx.shape[0], m, -1).mean(axis=1)

    def backward(node):
        g = np.zeros_like(x.value)
        _scatter_add_rows(g, idx.ravel(), np.repeat(node.grad / m, m, axis=0))
        _acc(x, g)

    return _node(out, (x,), backward, "group_mean")


def concat_rows(parts) -> DiffValue:
    parts = [constant(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=0)
    sizes = [p.value.shape[0] for p in parts]

    def backward(node):
        ofs = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                _acc(p, node.grad[ofs:ofs + n])
            ofs += n

    return _node(out, tuple(parts), backward, "concat_rows")


def concat_cols(parts) -> DiffValue:
    parts = [constant(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=1)
    sizes = [p.value.shape[1] for p in parts]

    def backward(node):
        ofs = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                _acc(p, node.grad[:, ofs:ofs + n])
            ofs += n

    return _node(out, tuple(parts), backward, "concat_cols")


def col_slice(x, start: int, stop: int) -> DiffValue:
    x = constant(x)
    out = np.ascontiguousarray(x.value[:, start:stop])

    def backward(node):
        g = np.zeros_like(x.value)
        g[:, start:stop] = node.grad
        _acc(x, g)

    return _node(out, (x,), backward, "col_slice")


def row_slice(x, start: int, stop: int) -> DiffValue:
    x = constant(x)
    out = np.ascontiguousarray(x.value[start:stop])

    def backward(node):
        g = np.zeros_like(x.value)
        g[start:stop] = node.grad
        _acc(x, g)

    return _node(out, (x,), backward, "row_slice")


def sum_all(x) -> DiffValue:
    x = constant(x)
    out = np.array(x.value.sum())

    def backward(node):
        _acc(x, np.full_like(x.value, node.grad.reshape(-1)[0]))

    return _node(out, (x,), backward, "sum_all")


def mean_all(x) -> DiffValue:
    x = constant(x)
    out = np.array(x.value.mean())

    def backward(node):
        _acc(x, np.full_like(x.value, node.grad.reshape(-1)[0] / x.value.size))

    return _node(out, (x,), backward, "mean_all")


def row_sum(x) -> DiffValue:
    """Sum over the feature axis: (N, D) -> (N, 1)."""
    x = constant(x)
    out = x.value.sum(axis=1, keepdims=True)

    def backward(node):
        _acc(x, np.broadcast_to(node.grad, x.value.shape).copy())

    return _node(out, (x,), backward, "row_sum")


def softmax(x, axis: int = -1) -> DiffValue:
    """Max-subtracted softmax along `axis`; rows sum to 1 by construction."""
    x = constant(x)
    v = x.value
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(node):
        g = node.grad
        y = node.value
        _acc(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _node(out, (x,), backward, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> DiffValue:
    """Per-row normalization of (N, D) with learned gain/bias (D,)."""
    x, gain, bias = constant(x), constant(gain), constant(bias)
    v = x.value
    mu = v.mean(axis=1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.value[None, :] + bias.value[None, :]

    def backward(node):
        g = node.grad
        if bias.requires_grad:
            _acc(bias, g.sum(axis=0))
        if gain.requires_grad:
            _acc(gain, (g * xhat).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.value[None, :]
            term = (gx - gx.mean(axis=1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=1, keepdims=True))
            _acc(x, term * inv)

    return _node(out, (x, gain, bias), backward, "layer_norm")


# ---------------------------------------------------------------------------
# multi-head attention


@dataclass
class AttentionParams:
    """Projection weights for one attention block (all D x D / D).

    The key projection carries no bias: softmax over keys is invariant to
    a shared shift, so a key bias would be a null parameter.
    """

    wq: DiffValue
    wk: DiffValue
    wv: DiffValue
    wo: DiffValue
    bq: DiffValue
    bv: DiffValue
    bo: DiffValue

    def all_params(self):
        return [self.wq, self.wk, self.wv, self.wo,
                self.bq, self.bv, self.bo]


def multi_head_attention(q, k, v, heads: int, params: AttentionParams) -> DiffValue:
    """Scaled dot-product attention with per-head projections.

    q: (Nq, D), k: (Nk, D), v: (Nk, D). Feature dim must divide evenly
    into `heads`; k and v must have the same number of rows.
    """
    q, k, v = constant(q), constant(k), constant(v)
    d = q.value.shape[1]
    if d % heads != 0:
        raise ValueError(f"feature dim {d} not divisible by {heads} heads")
    if k.value.shape[0] != v.value.shape[0]:
        raise ValueError("k and v row counts differ")
    dh = d // heads
    qp = add_bias(matmul(q, params.wq), params.bq)
    kp = matmul(k, params.wk)
    vp = add_bias(matmul(v, params.wv), params.bv)
    outs = []
    inv_scale = 1.0 / math.sqrt(dh)
    for h in range(heads):
        qh = col_slice(qp, h * dh, (h + 1) * dh)
        kh = col_slice(kp, h * dh, (h + 1) * dh)
        vh = col_slice(vp, h * dh, (h + 1) * dh)
        scores = mul(matmul(qh, transpose(kh)), inv_scale)
        attn = softmax(scores, axis=-1)
        outs.append(matmul(attn, vh))
    merged = outs[0] if heads == 1 else concat_cols(outs)
    return add_bias(matmul(merged, params.wo), params.bo)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: DiffValue) -> list:
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


def backward(loss: DiffValue, groups=None):
    """Populate gradients of every node reachable from `loss`.

    After the sweep, parameters listed in `groups` that did not
    participate get explicit zero gradients, and the graph is freed.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node)
    for node in order:
        node._parents = ()
        node._backward = None
    if groups is not None:
        for group in groups:
            for p in group.params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.value)


def zero_grads(groups):
    for group in groups:
        for p in group.params:
            p.grad = None


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    `f` is a zero-argument callable returning a scalar DiffValue computed
    from the current values of `params` (which must be DiffValue leaves).
    The relative error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy()
                for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = float(f().value.reshape(-1)[0])
            flat[i] = orig - eps
            minus = float(f().value.reshape(-1)[0])
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * eps)
            a = float(g.reshape(-1)[i])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    for p in params:
        p.grad = None
    return worst


# ---------------------------------------------------------------------------
# initialization


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))
