"""Minimal reverse-mode autodiff over numpy arrays.

Every op returns a new :class:`Tensor`; when any input requires grad the
output records a backward closure and its parents. ``backward`` walks the
recorded graph once in reverse topological order.

Training runs in float32. Ops preserve the dtype of their inputs, which lets
:func:`grad_check` evaluate the same graph in float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphConsumedError(RuntimeError):
    pass


_grad_enabled = True
_check_finite = True
# number of graph nodes ever recorded; lets callers assert a code path is graph-free
nodes_recorded = 0


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class _Node:
    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype == np.float64 else np.float32
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: _Node | None = None
        self.name = name

    # -- conveniences -------------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def backward(self, leaves: Iterable["Tensor"] | None = None, retain_graph: bool = False) -> None:
        backward(self, leaves=leaves, retain_graph=retain_graph)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(_as_tensor(o, self.dtype), self)

    def __mul__(self, o):
        if np.isscalar(o):
            return scalar_mul(self, float(o))
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if np.isscalar(o):
            return scalar_mul(self, 1.0 / float(o))
        return div(self, o)

    def __rtruediv__(self, o):
        return div(_as_tensor(o, self.dtype), self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _as_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(op: str, out: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    global nodes_recorded
    if _check_finite and not np.isfinite(out).all():
        raise NonFiniteError(f"op '{op}' produced NaN/Inf")
    t = Tensor(out, dtype=out.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t.node = _Node(op, tuple(parents), backward_fn)
        nodes_recorded += 1
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make("div", out, (a, b), bw)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    return _make("scalar-mul", a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", out, (a, b), bw)


# -- elementwise unary -------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make("tanh", out, (x,), lambda g: (g * (1 - out * out),))


def softplus(x: Tensor) -> Tensor:
    v = x.data
    out = np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))
    return _make("softplus", out.astype(v.dtype), (x,), lambda g: (g * _sigmoid_np(v),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NonFiniteError("op 'log' on non-positive input")
    return _make("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x: Tensor) -> Tensor:
    return _make("square", x.data * x.data, (x,), lambda g: (2 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def abs_(x: Tensor) -> Tensor:
    return _make("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


# -- reductions --------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make("sum", np.asarray(out, dtype=x.dtype), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scalar_mul(sum_(x, axes, keepdims), 1.0 / n)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (x,), bw)


def l2_norm(x: Tensor, axis: int = 1, eps: float = 1e-8) -> Tensor:
    """Scale ``x`` to unit L2 length along ``axis`` (smoothed by ``eps``)."""
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps)
    out = x.data / n

    def bw(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / n,)

    return _make("l2-norm", out, (x,), bw)


# -- shape ops ---------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _make("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if not axes:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def slice_(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    if not isinstance(idx, tuple):
        idx = (idx,)
    basic = all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make("slice", np.array(out, dtype=x.dtype), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make("concat", out, tuple(xs), bw)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    expanded = []
    for t in xs:
        shp = list(t.shape)
        shp.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shp)))
    return concat(expanded, axis=axis)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour ×2 upsampling of an (N, C, H, W) tensor."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape
    return _make("nearest-upsample", out, (x,),
                 lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def avgpool2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x needs even spatial dims, got {x.shape}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return ((g * 0.25).repeat(2, axis=2).repeat(2, axis=3),)

    return _make("avgpool", out, (x,), bw)


# -- convolution -------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) strided view
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _col2im(dcols: np.ndarray, xp_shape, kh: int, kw: int, stride: int) -> np.ndarray:
    # dcols: (N, Ho, Wo, C, kh, kw)
    n, ho, wo = dcols.shape[:3]
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. x: (N, C, H, W), w: (O, C, kh, kw), b: (O,)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    kh, kw = w.shape[2:]
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {w.shape[2:]} larger than padded input {xp.shape[2:]}")
    cols = _im2col(xp, kh, kw, stride)
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.tensordot(g, w.data, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
            dxp = _col2im(dcols, xp.shape, kh, kw, stride)
            gx = dxp[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]] if pad else dxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make("conv2d", out, parents, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2, pad: int = 0) -> Tensor:
    """Transposed convolution (adjoint of :func:`conv2d`). w: (C_in, C_out, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} incompatible with weight {w.shape}")
    n, _, h, wd = x.shape
    kh, kw = w.shape[2:]
    hp, wp = (h - 1) * stride + kh, (wd - 1) * stride + kw
    # scatter each input pixel's kernel footprint: (N, H, W, C_out, kh, kw)
    dcols = np.tensordot(x.data.transpose(0, 2, 3, 1), w.data, axes=([3], [0]))
    full = _col2im(dcols, (n, w.shape[1], hp, wp), kh, kw, stride)
    out = full[:, :, pad:hp - pad, pad:wp - pad] if pad else full
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        cols = _im2col(gp, kh, kw, stride)  # (N, C_out, H, W, kh, kw)
        gx = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, cols, axes=([0, 2, 3], [0, 2, 3]))
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make("transposed-conv2d", out, parents, bw)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int | None = None, eps: float = 1e-5) -> Tensor:
    n, c = x.shape[:2]
    if groups is None:
        groups = default_groups(c)
    if c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {groups} groups")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        dxhat = (g * gamma.data.reshape(bshape)).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        dx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True)
                    - xh * (dxhat * xh).mean(axis=2, keepdims=True))
        return dx.reshape(x.shape), gg, gb

    return _make("group-norm", out.astype(x.dtype), (x, gamma, beta), bw)


def default_groups(channels: int) -> int:
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


# -- op registry -------------------------------------------------------------

OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scalar-mul": scalar_mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "transposed-conv2d": conv_transpose2d,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "square": square,
    "sqrt": sqrt,
    "sum": sum_,
    "mean": mean,
    "softmax": softmax,
    "group-norm": group_norm,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "transpose": transpose,
    "nearest-upsample": upsample2x,
    "avgpool": avgpool2x,
    "l2-norm": l2_norm,
}


def forward_op(op: str, inputs: Sequence, **attrs) -> Tensor:
    """Apply a registered op by name, e.g. ``forward_op("conv2d", [x, w], stride=2)``."""
    try:
        fn = OPS[op]
    except KeyError:
        raise KeyError(f"unknown op id '{op}'") from None
    if op == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


# -- backward ----------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Leaves passed explicitly but unreachable from ``loss`` get a zero grad.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if leaves is not None:
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
    if not loss.requires_grad:
        return
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        if t.node.consumed:
            raise GraphConsumedError(f"graph through op '{t.node.op}' was already used by backward")
        pgrads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg
        if not retain_graph:
            t.node.consumed = True


# -- gradient checking -------------------------------------------------------

def grad_check(f: Callable[..., Tensor], inputs: Sequence, h: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` receives float64 Tensors built from ``inputs`` and must return a
    scalar. Error per element is |a - n| / (|a| + |n| + 1e-8).
    """
    base = [np.array(np.asarray(x.data if isinstance(x, Tensor) else x), dtype=np.float64) for x in inputs]
    ts = [Tensor(b.copy(), requires_grad=True, dtype=np.float64) for b in base]
    out = f(*ts)
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued f, got shape {out.shape}")
    backward(out, leaves=ts)
    worst = 0.0
    for i, b in enumerate(base):
        analytic = ts[i].grad.reshape(-1)
        flat = b.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            with no_grad():
                fp = f(*[Tensor(v, dtype=np.float64) for v in base]).item()
            flat[j] = orig - h
            with no_grad():
                fm = f(*[Tensor(v, dtype=np.float64) for v in base]).item()
            flat[j] = orig
            num = (fp - fm) / (2 * h)
            err = abs(analytic[j] - num) / (abs(analytic[j]) + abs(num) + 1e-8)
            worst = max(worst, err)
    return worst
