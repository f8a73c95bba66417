"""Dense tensors with reverse-mode automatic differentiation.

Storage is a contiguous numpy array (float32 by default, float64 for
gradient verification).  Every differentiable operation records its parents
and a closure mapping the output gradient to parent gradients; ``backward``
walks the recorded graph once in reverse topological order.
"""
from __future__ import annotations

import contextlib
import io
import struct
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

MAX_RANK = 4
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}

_state = {"grad_enabled": True, "default_dtype": np.dtype(np.float32)}
_mac_counters: list["MacCounter"] = []


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation's precondition is violated."""


# ---------------------------------------------------------------- context


@contextlib.contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def grad_enabled() -> bool:
    return _state["grad_enabled"]


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _state["default_dtype"]
    _state["default_dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["default_dtype"] = prev


def get_default_dtype() -> np.dtype:
    return _state["default_dtype"]


class MacCounter:
    """Tallies multiply-accumulates executed by matmul and conv2d."""

    def __init__(self):
        self.by_kind = {"matmul": 0, "conv2d": 0}

    @property
    def total(self) -> int:
        return sum(self.by_kind.values())

    def add(self, kind: str, n: int):
        self.by_kind[kind] += int(n)


@contextlib.contextmanager
def count_macs():
    counter = MacCounter()
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def _record_macs(kind: str, n: int):
    for c in _mac_counters:
        c.add(kind, n)


# ---------------------------------------------------------------- tensor


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_retain", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in DTYPE_CODES else get_default_dtype()
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._retain = False
        self.op = "leaf"

    # -- basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def astype(self, dtype) -> "Tensor":
        t = Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype)
        return t

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __len__(self):
        return self.shape[0]

    # -- operators
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self, grad=None):
        backward(self, grad)


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str = "custom") -> Tensor:
    """Wrap ``data`` as the output of a differentiable operation.

    ``backward_fn(g)`` must return one gradient (or None) per parent, each
    with that parent's shape.
    """
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------- backward


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
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


def backward(loss: Tensor, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-tracking leaf."""
    if grad is None:
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any grad-tracking tensor")
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None or node._retain:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- helpers


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"shapes {a} and {b} are not broadcastable") from None


def _pair(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return Tensor(a), Tensor(b)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    y = y.astype(x.dtype, copy=False)
    return make_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


_GELU_K = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    x2 = xd * xd
    t = x2 * _GELU_C
    t += 1.0
    t *= xd
    t *= _GELU_K
    np.tanh(t, out=t)
    y = t + 1.0
    y *= xd
    y *= 0.5

    def bw(g):
        # d/dx = 0.5 (1 + t) + 0.5 x (1 - t^2) K (1 + 3 C x^2)
        d = x2 * (3.0 * _GELU_C)
        d += 1.0
        d *= _GELU_K
        d *= 1.0 - t * t
        d *= xd
        d += 1.0 + t
        d *= 0.5
        d *= g
        return (d,)

    return make_op(y, (x,), bw, "gelu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tabs(x: Tensor) -> Tensor:
    return make_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def clamp_max(x: Tensor, limit: float) -> Tensor:
    """min(x, limit); the gradient is zero where the clamp is active."""
    mask = x.data < limit
    return make_op(np.where(mask, x.data, np.asarray(limit, dtype=x.dtype)), (x,),
                   lambda g: (g * mask,), "clamp_max")


def elementwise(kind: str, *args) -> Tensor:
    fns = {"sigmoid": sigmoid, "gelu": gelu, "relu": relu, "add": add, "mul": mul, "sub": sub}
    if kind not in fns:
        raise ContractError(f"unknown elementwise kind {kind!r}")
    return fns[kind](*args)


# ---------------------------------------------------------------- reductions


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_op(out, (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return make_op(out, (x,), bw, "mean")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layer_norm over {c} channels got gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gain.data + bias.data

    def bw(g):
        gx = ggain = gbias = None
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=lead)
        if bias.requires_grad:
            gbias = g.sum(axis=lead)
        if x.requires_grad:
            gh = g * gain.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return make_op(y.astype(x.dtype, copy=False), (x, gain, bias), bw, "layer_norm")


# ---------------------------------------------------------------- products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    batch = _broadcast_shape(a.shape[:-2], b.shape[:-2])
    flat = b.ndim == 2 and a.ndim > 2  # token-major activations times a weight matrix
    if flat:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = np.matmul(a.data, b.data)
    _record_macs("matmul", int(np.prod(batch, dtype=np.int64)) * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def bw(g):
        ga = gb = None
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                ga = (g2 @ b.data.T).reshape(a.shape)
            if b.requires_grad:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g2
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(out, (a, b), bw, "matmul")


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # B,C,H',W',k,k
    b, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k), ho, wo


def _col2im(cols: np.ndarray, shape: tuple, k: int, pad: int, ho: int, wo: int) -> np.ndarray:
    b, c, h, w = shape
    cols = cols.reshape(b, ho, wo, c, k, k)
    gx = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            gx[:, :, i:i + ho, j:j + wo] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        gx = gx[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(gx)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    """Stride-1 2-D cross-correlation."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    cout, cin, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ContractError(f"conv2d needs an odd square kernel, got {k}x{k2}")
    if x.shape[1] != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    bsz = x.shape[0]
    cols, ho, wo = _im2col(x.data, k, padding)
    wmat = w.data.reshape(cout, -1)
    out = cols @ wmat.T
    _record_macs("conv2d", cols.shape[0] * cols.shape[1] * cout)
    if bias is not None:
        out = out + bias.data
    y = out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _col2im(g2 @ wmat, x.shape, k, padding, ho, wo)
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_op(np.ascontiguousarray(y), parents, bw, "conv2d")


def unfold(x: Tensor, k: int = 3) -> Tensor:
    """Zero-padded k x k neighbourhood gather: [B,C,H,W] -> [B,C*k*k,H,W]."""
    pad = k // 2
    b, c, h, w = x.shape
    cols, _, _ = _im2col(x.data, k, pad)  # (B*H*W, C*k*k)
    y = cols.reshape(b, h, w, c * k * k).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c * k * k)
        return (_col2im(g2, x.shape, k, pad, h, w),)

    return make_op(np.ascontiguousarray(y), (x,), bw, "unfold")


def pool2d(x: Tensor, kind: str = "max", window: int = 2, stride: int | None = None) -> Tensor:
    stride = window if stride is None else stride
    if x.ndim != 4:
        raise DimensionError(f"pool2d expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} larger than input {h}x{w}")
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(b, c, ho, wo, window * window)
    if kind == "max":
        arg = flat.argmax(axis=-1)  # first occurrence on ties
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    elif kind == "avg":
        y = flat.mean(axis=-1)
    else:
        raise ContractError(f"unknown pooling kind {kind!r}")

    def bw(g):
        gx = np.zeros_like(x.data)
        for di in range(window):
            for dj in range(window):
                if kind == "max":
                    contrib = g * (arg == di * window + dj)
                else:
                    contrib = g / (window * window)
                gx[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += contrib
        return (gx,)

    return make_op(np.ascontiguousarray(y, dtype=x.dtype), (x,), bw, f"{kind}pool")


# ---------------------------------------------------------------- layout


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    return make_op(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (np.ascontiguousarray(g.transpose(inv)),), "permute")


def transpose(x: Tensor, a: int = -2, b: int = -1) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return permute(x, axes)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.ascontiguousarray(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax))
                     for i in range(len(xs)))

    return make_op(np.concatenate([t.data for t in xs], axis=ax), xs, bw, "concat")


def split(x: Tensor, sections, axis: int = -1) -> list[Tensor]:
    """Split into ``sections`` equal parts (int) or parts of the given extents."""
    ax = axis % x.ndim
    n = x.shape[ax]
    if isinstance(sections, int):
        if n % sections:
            raise DimensionError(f"axis extent {n} not divisible into {sections} parts")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != n:
            raise DimensionError(f"split extents {sizes} do not sum to {n}")
    out, start = [], 0
    for s in sizes:
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(start, start + s)
        out.append(getitem(x, tuple(idx)))
        start += s
    return out


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    y = np.ascontiguousarray(x.data[idx])
    basic = _is_basic(idx)

    def bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make_op(y, (x,), bw, "getitem")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """x: [B, R, D], index: [B, Q] ints -> [B, Q, D] (rows picked per batch)."""
    b, r = x.shape[0], x.shape[1]
    bidx = np.arange(b)[:, None]
    y = x.data[bidx, index]

    def bw(g):
        # scatter-add as a sparse product: deterministic and much faster than ufunc.at
        flat = (index + bidx * r).reshape(-1)
        scatter = sparse.csr_matrix((np.ones(flat.size, dtype=g.dtype), (flat, np.arange(flat.size))),
                                    shape=(b * r, flat.size))
        gx = scatter @ g.reshape(flat.size, -1)
        return (np.asarray(gx, dtype=x.dtype).reshape(x.shape),)

    return make_op(np.ascontiguousarray(y), (x,), bw, "gather_rows")


def pad(x: Tensor, widths) -> Tensor:
    """Zero-pad; ``widths`` is one (before, after) pair per axis."""
    widths = tuple(tuple(int(v) for v in w) for w in widths)
    if len(widths) != x.ndim or any(a < 0 or b < 0 for a, b in widths):
        raise DimensionError(f"bad pad widths {widths} for shape {x.shape}")
    sl = tuple(slice(a, a + n) for (a, _), n in zip(widths, x.shape))
    return make_op(np.pad(x.data, widths), (x,), lambda g: (np.ascontiguousarray(g[sl]),), "pad")


def crop(x: Tensor, starts, sizes) -> Tensor:
    if len(starts) != x.ndim or len(sizes) != x.ndim:
        raise DimensionError("crop needs one start and size per axis")
    for s, n, ext in zip(starts, sizes, x.shape):
        if s < 0 or s + n > ext:
            raise DimensionError(f"crop window [{s}, {s + n}) exceeds extent {ext}")
    return getitem(x, tuple(slice(s, s + n) for s, n in zip(starts, sizes)))


def reshape_ops(kind: str, x, *args, **kwargs):
    fns = {"reshape": reshape, "permute": permute, "concat": concat, "split": split, "pad": pad, "crop": crop}
    if kind not in fns:
        raise ContractError(f"unknown layout op {kind!r}")
    return fns[kind](x, *args, **kwargs)


# ---------------------------------------------------------------- serialization


def tensor_to_bytes(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.dtype not in DTYPE_CODES:
        raise ContractError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > MAX_RANK:
        raise DimensionError(f"rank {arr.ndim} exceeds {MAX_RANK}")
    head = b"TNSR" + struct.pack("<BB", DTYPE_CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def read_tensor(fp: io.BufferedIOBase) -> Tensor:
    magic = fp.read(4)
    if magic != b"TNSR":
        raise ValueError(f"bad tensor magic {magic!r}")
    code, rank = struct.unpack("<BB", fp.read(2))
    if code not in CODE_DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{rank}I", fp.read(4 * rank))
    dtype = CODE_DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64))
    raw = fp.read(n * dtype.itemsize)
    if len(raw) != n * dtype.itemsize:
        raise ValueError("truncated tensor payload")
    arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
    return Tensor(arr, dtype=dtype)


def tensor_from_bytes(buf: bytes) -> Tensor:
    return read_tensor(io.BytesIO(buf))


# ---------------------------------------------------------------- finite differences


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-4, indices: Iterable | None = None):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``x`` (perturbed in place).

    Returns (flat_indices, estimates).
    """
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(list(indices), dtype=np.int64)
    est = np.empty(idx.size, dtype=np.float64)
    with no_grad():
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data.sum())
            flat[i] = orig - h
            fm = float(fn().data.sum())
            flat[i] = orig
            est[n] = (fp - fm) / (2 * h)
    return idx, est


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor * max|n|).

    Entries far below the gradient's overall magnitude are judged against
    that magnitude rather than their own.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = max(np.abs(n).max(), np.abs(a).max(), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float((np.abs(a - n) / denom).max())


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-4,
              max_entries: int | None = None, rng: np.random.Generator | None = None,
              floor: float = 1e-3) -> float:
    """Worst relative error between autodiff and central differences over ``inputs``.

    ``fn`` is re-evaluated with perturbed inputs, so it must read them afresh.
    With ``max_entries`` set, a random subset of entries of each input is checked.
    """
    for t in inputs:
        t.grad = None
    out = fn()
    loss = tsum(out) if out.size != 1 else out
    backward(loss)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1)
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = rng.choice(t.size, size=max_entries, replace=False)
        idx, est = numeric_grad(fn, t, h, idx)
        worst = max(worst, relative_error(analytic[idx], est, floor))
    return worst
