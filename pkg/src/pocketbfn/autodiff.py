"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records its parents and a context tuple; the gradient of each op
lives in the ``RULES`` registry keyed by op name, so a single rule can be
inspected or swapped in isolation (the gradient-check suite relies on this).

Shape policy: operands must agree exactly. The only broadcast allowed is a
1-D row-vector bias of length ``d`` added to an ``[..., d]`` operand, plus
Python scalars as constants.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

__all__ = [
    "Tensor", "DimensionError", "NumericError", "GradientError", "RULES",
    "tensor", "parameter", "constant", "add", "sub", "mul", "neg", "scale",
    "rowscale", "matmul", "transpose", "reshape", "concat", "take_rows",
    "scatter_rows", "slice_rows", "relu", "sigmoid", "exp", "log", "sqrt",
    "square", "sum", "mean", "mse", "softmax_axis", "log_softmax",
    "logsumexp", "layer_norm", "segment_softmax", "rbf_expand",
    "clip_row_norm", "gradients", "zero_grad",
]


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class GradientError(RuntimeError):
    pass


RULES: dict[str, Callable] = {}


def rule(name):
    def register(fn):
        RULES[name] = fn
        return fn
    return register


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_ctx",
                 "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._ctx = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf with
        ``requires_grad`` reachable from this scalar."""
        grads = _backprop(self)
        for t, g in grads.values():
            if t.is_leaf and t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, data: np.ndarray, parents: Sequence[Tensor], ctx=None) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output from op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out.op = op
        out._parents = tuple(parents)
        out._ctx = ctx
    else:
        out.op = "leaf"
        out._parents = ()
        out._ctx = None
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(root: Tensor) -> dict[int, tuple[Tensor, np.ndarray]]:
    if root.data.size != 1:
        raise GradientError(f"backward needs a scalar root, got shape {root.shape}")
    if root._consumed:
        raise GradientError("backward already ran on this graph; rebuild the forward pass "
                            "(and zero_grad the parameters) before calling it again")
    root._consumed = True
    grads: dict[int, tuple[Tensor, np.ndarray]] = {}
    if not root.requires_grad:
        return grads
    grads[id(root)] = (root, np.ones_like(root.data))
    for node in reversed(_topological(root)):
        if node.is_leaf:
            continue
        g = grads[id(node)][1]
        parent_grads = RULES[node.op](g, node._ctx)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise GradientError(f"rule '{node.op}' returned grad {pg.shape} for input {p.shape}")
            key = id(p)
            if key in grads:
                grads[key] = (p, grads[key][1] + pg)
            else:
                grads[key] = (p, pg)
    return grads


def gradients(root: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Functional backward: returns d(root)/d(w) for each ``w`` without
    touching ``.grad`` (safe for per-item gradients computed on threads)."""
    grads = _backprop(root)
    return [grads[id(w)][1] if id(w) in grads else np.zeros_like(w.data) for w in wrt]


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def segment_sum(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """``out[idx[e]] += values[e]`` with a fixed summation order."""
    if values.ndim == 1:
        return np.bincount(idx, weights=values, minlength=n).astype(np.float64)
    if idx.shape[0] == 0:
        return np.zeros((n,) + values.shape[1:])
    m = sparse.csr_matrix((np.ones(idx.shape[0]), (idx, np.arange(idx.shape[0]))),
                          shape=(n, idx.shape[0]))
    flat = values.reshape(values.shape[0], -1)
    return np.asarray(m @ flat).reshape((n,) + values.shape[1:])


# ---------------------------------------------------------------- arithmetic

def _bias_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> int:
    """0 = same shape, 1 = b is row bias of a, 2 = a is row bias of b."""
    if a.shape == b.shape:
        return 0
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return 1
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return 2
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def _reduce_bias(g: np.ndarray, mode: int, which: int) -> np.ndarray:
    if mode == which:
        return g.reshape(-1, g.shape[-1]).sum(axis=0)
    return g


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = constant(a)
        return _record("add_scalar", a.data + float(b), (a,))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return add(b, a)
    a, b = constant(a), constant(b)
    mode = _bias_broadcast(a.data, b.data, "add")
    return _record("add", a.data + b.data, (a, b), mode)


@rule("add")
def _add_rule(g, mode):
    return _reduce_bias(g, mode, 2), _reduce_bias(g, mode, 1)


@rule("add_scalar")
def _add_scalar_rule(g, ctx):
    return (g,)


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add(a, -float(b))
    return add(a, neg(b))


def neg(a) -> Tensor:
    a = constant(a)
    return _record("neg", -a.data, (a,))


@rule("neg")
def _neg_rule(g, ctx):
    return (-g,)


def scale(a, c: float) -> Tensor:
    a = constant(a)
    c = float(c)
    return _record("scale", a.data * c, (a,), c)


@rule("scale")
def _scale_rule(g, c):
    return (g * c,)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, b)
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return scale(b, a)
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _record("mul", a.data * b.data, (a, b),
                   (a.data if b.requires_grad else None, b.data if a.requires_grad else None))


@rule("mul")
def _mul_rule(g, ctx):
    a, b = ctx
    return (None if b is None else g * b), (None if a is None else g * a)


def rowscale(x, s) -> Tensor:
    """Multiply row ``i`` of ``x [N, d]`` by scalar ``s[i]``."""
    x, s = constant(x), constant(s)
    if x.data.ndim != 2 or s.data.shape != (x.shape[0],):
        raise DimensionError(f"rowscale: x {x.shape} needs s of shape ({x.shape[0] if x.data.ndim else '?'},), got {s.shape}")
    return _record("rowscale", x.data * s.data[:, None], (x, s),
                   (x.data if s.requires_grad else None, s.data if x.requires_grad else None))


@rule("rowscale")
def _rowscale_rule(g, ctx):
    x, s = ctx
    return (None if s is None else g * s[:, None]), (None if x is None else np.einsum("ij,ij->i", g, x))


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data @ b.data
    return _record("matmul", out, (a, b),
                   (a.data if b.requires_grad else None, b.data if a.requires_grad else None))


@rule("matmul")
def _matmul_rule(g, ctx):
    a, b = ctx
    return (None if b is None else g @ b.T), (None if a is None else a.T @ g)


def transpose(a) -> Tensor:
    a = constant(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {a.shape}")
    return _record("transpose", a.data.T, (a,))


@rule("transpose")
def _transpose_rule(g, ctx):
    return (g.T,)


def reshape(a, shape) -> Tensor:
    a = constant(a)
    shape = tuple(shape)
    return _record("reshape", a.data.reshape(shape), (a,), a.shape)


@rule("reshape")
def _reshape_rule(g, shape):
    return (g.reshape(shape),)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [constant(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat axis {axis}: {[t.shape for t in ts]}")
    sizes = [t.shape[ax] for t in ts]
    return _record("concat", np.concatenate([t.data for t in ts], axis=ax), ts, (ax, sizes))


@rule("concat")
def _concat_rule(g, ctx):
    ax, sizes = ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=ax))


def take_rows(x, idx) -> Tensor:
    x = constant(x)
    idx = np.asarray(idx, dtype=np.intp)
    return _record("take_rows", x.data[idx], (x,), (idx, x.shape))


@rule("take_rows")
def _take_rows_rule(g, ctx):
    idx, shape = ctx
    return (segment_sum(g, idx, shape[0]),)


def scatter_rows(x, idx, n: int) -> Tensor:
    """Sum rows of ``x`` into ``n`` buckets: ``out[idx[e]] += x[e]``."""
    x = constant(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape != (x.shape[0],):
        raise DimensionError(f"scatter_rows: {idx.shape[0]} indices for {x.shape[0]} rows")
    return _record("scatter_rows", segment_sum(x.data, idx, n), (x,), idx)


@rule("scatter_rows")
def _scatter_rows_rule(g, idx):
    return (g[idx],)


def slice_rows(x, start: int, stop: int) -> Tensor:
    x = constant(x)
    return _record("slice_rows", x.data[start:stop], (x,), (start, stop, x.shape))


@rule("slice_rows")
def _slice_rows_rule(g, ctx):
    start, stop, shape = ctx
    out = np.zeros(shape)
    out[start:stop] = g
    return (out,)


# ------------------------------------------------------------- elementwise

def relu(x) -> Tensor:
    x = constant(x)
    return _record("relu", np.maximum(x.data, 0.0), (x,), x.data > 0)


@rule("relu")
def _relu_rule(g, mask):
    return (g * mask,)


def sigmoid(x) -> Tensor:
    x = constant(x)
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _record("sigmoid", s, (x,), s)


@rule("sigmoid")
def _sigmoid_rule(g, s):
    return (g * s * (1.0 - s),)


def exp(x) -> Tensor:
    x = constant(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _record("exp", e, (x,), e)


@rule("exp")
def _exp_rule(g, e):
    return (g * e,)


def log(x) -> Tensor:
    x = constant(x)
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive value")
    return _record("log", np.log(x.data), (x,), x.data)


@rule("log")
def _log_rule(g, x):
    return (g / x,)


def sqrt(x) -> Tensor:
    x = constant(x)
    if np.any(x.data < 0):
        raise NumericError("sqrt of negative value")
    r = np.sqrt(x.data)
    return _record("sqrt", r, (x,), r)


@rule("sqrt")
def _sqrt_rule(g, r):
    return (g * 0.5 / r,)


def square(x) -> Tensor:
    x = constant(x)
    return _record("square", x.data * x.data, (x,), x.data)


@rule("square")
def _square_rule(g, x):
    return (2.0 * g * x,)


# ---------------------------------------------------------------- reductions

def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = constant(x)
    return _record("sum", np.asarray(x.data.sum(axis=axis)), (x,), (axis, x.shape))


@rule("sum")
def _sum_rule(g, ctx):
    axis, shape = ctx
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


def mean(x) -> Tensor:
    x = constant(x)
    return scale(sum(x), 1.0 / x.data.size)


def mse(a, b) -> Tensor:
    return mean(square(sub(a, b)))


def softmax_axis(x, axis: int = -1) -> Tensor:
    x = constant(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _record("softmax", s, (x,), (s, axis))


@rule("softmax")
def _softmax_rule(g, ctx):
    s, axis = ctx
    return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = constant(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    return _record("log_softmax", out, (x,), (np.exp(out), axis))


@rule("log_softmax")
def _log_softmax_rule(g, ctx):
    s, axis = ctx
    return (g - s * g.sum(axis=axis, keepdims=True),)


def logsumexp(x, axis: int = -1) -> Tensor:
    x = constant(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    tot = e.sum(axis=axis, keepdims=True)
    out = (np.log(tot) + m).squeeze(axis)
    return _record("logsumexp", out, (x,), (e / tot, axis))


@rule("logsumexp")
def _logsumexp_rule(g, ctx):
    w, axis = ctx
    return (w * np.expand_dims(g, axis),)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    x, gain, bias = constant(x), constant(gain), constant(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: x {x.shape} with gain {gain.shape}, bias {bias.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return _record("layer_norm", xhat * gain.data + bias.data, (x, gain, bias),
                   (xhat, inv, gain.data))


@rule("layer_norm")
def _layer_norm_rule(g, ctx):
    xhat, inv, gain = ctx
    flat = g.reshape(-1, g.shape[-1])
    dgain = (flat * xhat.reshape(flat.shape)).sum(axis=0)
    dbias = flat.sum(axis=0)
    gx = g * gain
    dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


# ------------------------------------------------------------- graph helpers

def segment_softmax(x, seg, n: int) -> Tensor:
    """Softmax of a 1-D score vector within groups ``seg`` (values in [0, n))."""
    x = constant(x)
    seg = np.asarray(seg, dtype=np.intp)
    if x.data.ndim != 1 or seg.shape != x.shape:
        raise DimensionError(f"segment_softmax: scores {x.shape}, segments {seg.shape}")
    mx = np.full(n, -np.inf)
    np.maximum.at(mx, seg, x.data)
    e = np.exp(x.data - mx[seg])
    tot = segment_sum(e, seg, n)
    s = e / tot[seg]
    return _record("segment_softmax", s, (x,), (s, seg, n))


@rule("segment_softmax")
def _segment_softmax_rule(g, ctx):
    s, seg, n = ctx
    dot = segment_sum(g * s, seg, n)
    return (s * (g - dot[seg]),)


def rbf_expand(d, centers, width: float) -> Tensor:
    """Gaussian basis ``exp(-(d - c)^2 / (2 w^2))`` of a distance vector."""
    d = constant(d)
    centers = np.asarray(centers, dtype=np.float64)
    if d.data.ndim != 1:
        raise DimensionError(f"rbf_expand expects a vector of distances, got {d.shape}")
    diff = d.data[:, None] - centers[None, :]
    out = np.exp(-0.5 * (diff / width) ** 2)
    return _record("rbf", out, (d,), (out, diff, width))


@rule("rbf")
def _rbf_rule(g, ctx):
    out, diff, width = ctx
    return ((g * out * (-diff / width**2)).sum(axis=1),)


def clip_row_norm(x, max_norm: float) -> Tensor:
    """Rescale rows whose Euclidean norm exceeds ``max_norm`` down to it."""
    x = constant(x)
    norms = np.sqrt((x.data ** 2).sum(axis=1))
    over = norms > max_norm
    factor = np.where(over, max_norm / np.where(over, norms, 1.0), 1.0)
    return _record("clip_row_norm", x.data * factor[:, None], (x,),
                   (x.data, norms, over, factor))


@rule("clip_row_norm")
def _clip_row_norm_rule(g, ctx):
    x, norms, over, factor = ctx
    out = g * factor[:, None]
    if over.any():
        xo, no = x[over], norms[over]
        go = g[over]
        # d/dx (c x / |x|) = c/|x| (I - x x^T / |x|^2)
        radial = (go * xo).sum(axis=1, keepdims=True) * xo / no[:, None] ** 2
        out[over] = factor[over][:, None] * (go - radial)
    return (out,)
