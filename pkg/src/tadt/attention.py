"""Window partitioning and the local/global self-attention branches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module, param, trunc_normal
from .tensor import ContractError, DimensionError, Tensor


@dataclass(frozen=True)
class WindowLayout:
    batch: int
    height: int
    width: int
    window: int
    padded_height: int
    padded_width: int

    @property
    def rows(self) -> int:
        return self.padded_height // self.window

    @property
    def cols(self) -> int:
        return self.padded_width // self.window

    @property
    def n_windows(self) -> int:
        return self.rows * self.cols


def make_layout(batch: int, h: int, w: int, m: int) -> WindowLayout:
    if m < 1:
        raise ContractError(f"window size must be >= 1, got {m}")
    return WindowLayout(batch, h, w, m, -(-h // m) * m, -(-w // m) * m)


def _partition(x: np.ndarray, lay: WindowLayout) -> np.ndarray:
    b, h, w, c = x.shape
    m = lay.window
    if (lay.padded_height, lay.padded_width) != (h, w):
        x = np.pad(x, ((0, 0), (0, lay.padded_height - h), (0, lay.padded_width - w), (0, 0)))
    x = x.reshape(b, lay.rows, m, lay.cols, m, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x.reshape(b * lay.n_windows, m * m, c))


def _merge(win: np.ndarray, lay: WindowLayout) -> np.ndarray:
    m, c = lay.window, win.shape[-1]
    x = win.reshape(lay.batch, lay.rows, lay.cols, m, m, c).transpose(0, 1, 3, 2, 4, 5)
    x = x.reshape(lay.batch, lay.padded_height, lay.padded_width, c)
    return np.ascontiguousarray(x[:, :lay.height, :lay.width])


def window_partition(x: Tensor, m: int) -> tuple[Tensor, WindowLayout]:
    """[B,H,W,c] -> [B*n_w, m*m, c], zero-padding H and W up to multiples of m."""
    if x.ndim != 4:
        raise DimensionError(f"window_partition expects [B,H,W,c], got {x.shape}")
    lay = make_layout(x.shape[0], x.shape[1], x.shape[2], m)
    out = T.make_op(_partition(x.data, lay), (x,), lambda g: (_merge(g, lay),), "window_partition")
    return out, lay


def window_merge(windows: Tensor, layout: WindowLayout) -> Tensor:
    """Inverse of window_partition, cropping the padding away."""
    m = layout.window
    if windows.ndim != 3 or windows.shape[0] != layout.batch * layout.n_windows or windows.shape[1] != m * m:
        raise DimensionError(f"windows {windows.shape} inconsistent with layout {layout}")
    return T.make_op(_merge(windows.data, layout), (windows,),
                     lambda g: (_partition(g, layout),), "window_merge")


def _heads(x: Tensor, h: int) -> Tensor:
    bw, n, c = x.shape
    return x.reshape(bw, n, h, c // h).permute(0, 2, 1, 3)


def attention_weights(q: Tensor, k: Tensor, heads: int, bias: Tensor | None = None) -> Tensor:
    """Per-head softmax(Q K^T / sqrt(d_head)) of shape [Bw, h, Tq, Tk]."""
    c = q.shape[-1]
    if c % heads:
        raise ContractError(f"channel count {c} not divisible by {heads} heads")
    if k.shape[-1] != c:
        raise DimensionError(f"Q {q.shape} and K {k.shape} differ in channels")
    qh, kh = _heads(q, heads), _heads(k, heads)
    scores = T.matmul(qh, T.transpose(kh)) * (1.0 / np.sqrt(c // heads))
    if bias is not None:
        scores = scores + bias
    return T.softmax(scores, axis=-1)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, bias: Tensor | None = None) -> Tensor:
    """Multi-head attention over token tensors [Bw, Tq, c] x [Bw, Tk, c]."""
    if k.shape[1] != v.shape[1]:
        raise DimensionError(f"K {k.shape} and V {v.shape} differ in token count")
    attn = attention_weights(q, k, heads, bias)
    out = T.matmul(attn, _heads(v, heads))  # Bw,h,Tq,dh
    bw, h, n, dh = out.shape
    return out.permute(0, 2, 1, 3).reshape(bw, n, h * dh)


def relative_position_index(m: int) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    coords = np.stack([ys.ravel(), xs.ravel()])  # 2, m*m
    rel = coords[:, :, None] - coords[:, None, :] + (m - 1)
    return rel[0] * (2 * m - 1) + rel[1]


class LocalAttention(Module):
    """LSA branch: expand c -> 3c, window attention at size m, merge back."""

    def __init__(self, c: int, window: int, heads: int, rng: np.random.Generator, relative_bias: bool = False):
        if c % heads:
            raise ContractError(f"branch width {c} not divisible by {heads} heads")
        self.c, self.window, self.heads = c, window, heads
        self.qkv = Linear(c, 3 * c, rng, bias=False)
        self.bias_table = param(trunc_normal(rng, ((2 * window - 1) ** 2, heads))) if relative_bias else None

    def _bias(self) -> Tensor | None:
        if self.bias_table is None:
            return None
        idx = relative_position_index(self.window)
        b = self.bias_table[idx.reshape(-1)]  # m^4, h
        n = self.window * self.window
        return b.reshape(n, n, self.heads).permute(2, 0, 1)

    def qkv_windows(self, f: Tensor, h: int, w: int):
        b = f.shape[0]
        qkv = self.qkv(f).reshape(b, h, w, 3 * self.c)
        win, lay = window_partition(qkv, self.window)
        q, k, v = T.split(win, 3, axis=-1)
        return q, k, v, lay

    def __call__(self, f: Tensor, h: int, w: int) -> Tensor:
        if f.shape[-1] != self.c:
            raise DimensionError(f"branch expects {self.c} channels, got {f.shape}")
        q, k, v, lay = self.qkv_windows(f, h, w)
        out = scaled_dot_attention(q, k, v, self.heads, self._bias())
        return window_merge(out, lay).reshape(f.shape[0], h * w, self.c)


def reduce_tokens(x: Tensor, m: int, d: int, kind: str, projection: Tensor | None = None) -> Tensor:
    """[Bw, m*m, c] -> [Bw, d*d, c] by max/avg pooling or a fixed random projection."""
    bw, n, c = x.shape
    if kind == "random":
        return T.transpose(T.matmul(T.transpose(x), projection))
    if m % d:
        raise ContractError(f"pool size {d} does not divide window {m}")
    s = m // d
    grid = x.reshape(bw, m, m, c).permute(0, 3, 1, 2)
    pooled = T.pool2d(grid, kind, s, s)
    return pooled.permute(0, 2, 3, 1).reshape(bw, d * d, c)


class GlobalAttention(LocalAttention):
    """GSA branch: like LSA at the global window, but K and V are reduced to d x d tokens."""

    _buffer_names = ("projection",)

    def __init__(self, c: int, window: int, pool: int, heads: int, rng: np.random.Generator, pooling: str = "max"):
        super().__init__(c, window, heads, rng)
        if pool > window or window % pool:
            raise ContractError(f"pool size {pool} must divide window {window}")
        self.pool, self.pooling = pool, pooling
        self.projection = None
        if pooling == "random":
            # fixed, untrained reduction matrix
            proj = rng.standard_normal((window * window, pool * pool)) / window
            self.projection = Tensor(proj, dtype=T.get_default_dtype())

    def scores(self, f: Tensor, h: int, w: int) -> Tensor:
        q, k, _, _ = self.qkv_windows(f, h, w)
        k = reduce_tokens(k, self.window, self.pool, self.pooling, self.projection)
        return attention_weights(q, k, self.heads)

    def __call__(self, f: Tensor, h: int, w: int) -> Tensor:
        if f.shape[-1] != self.c:
            raise DimensionError(f"branch expects {self.c} channels, got {f.shape}")
        q, k, v, lay = self.qkv_windows(f, h, w)
        k = reduce_tokens(k, self.window, self.pool, self.pooling, self.projection)
        v = reduce_tokens(v, self.window, self.pool, self.pooling, self.projection)
        out = scaled_dot_attention(q, k, v, self.heads)
        return window_merge(out, lay).reshape(f.shape[0], h * w, self.c)


def lsa_forward(f: Tensor, branch: LocalAttention, h: int, w: int) -> Tensor:
    return branch(f, h, w)


def gsa_forward(f: Tensor, branch: GlobalAttention, h: int, w: int) -> Tensor:
    return branch(f, h, w)
