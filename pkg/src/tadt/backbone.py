"""Multi-scale transformer blocks/groups and the routed feature extractor."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .attention import GlobalAttention, LocalAttention
from .config import BackboneConfig
from .nn import MLP, Conv2d, LayerNorm, Module, param, trunc_normal
from .tensor import ContractError, Tensor


def _check_binary(values: np.ndarray, what: str = "routing"):
    if not np.all((values == 0) | (values == 1)):
        raise ContractError(f"{what} values must be exactly 0 or 1, got {np.unique(values)}")


def sliceable_projection(blocks, weight: Tensor, routes) -> Tensor:
    """Project the concatenated branch outputs using only the active weight rows.

    ``blocks[j]`` is the branch-j output (tokens x C/4) when ``routes[j] == 1``
    and None otherwise.  The result equals concat(blocks with zeros) @ weight.
    """
    routes = np.asarray(routes)
    _check_binary(routes)
    if len(blocks) != len(routes):
        raise ContractError(f"{len(blocks)} blocks for {len(routes)} routes")
    for j, (blk, r) in enumerate(zip(blocks, routes)):
        if (blk is not None) != bool(r):
            raise ContractError(f"branch {j}: block {'present' if blk is not None else 'missing'} but r={r}")
    active = [j for j, r in enumerate(routes) if r]
    if not active:
        return None
    q = weight.shape[0] // len(routes)
    if len(active) == len(routes):
        o_cat, w_act = T.concat(blocks, axis=-1), weight
    else:
        o_cat = T.concat([blocks[j] for j in active], axis=-1) if len(active) > 1 else blocks[active[0]]
        w_act = T.concat([weight[j * q:(j + 1) * q] for j in active], axis=0)
    return T.matmul(o_cat, w_act)


class MSTB(Module):
    """Four channel-split attention branches, sliced projection, pre-norm MLP."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        c, q = cfg.channels, cfg.channels // 4
        self.channels = c
        self.norm1 = LayerNorm(c)
        self.branches = [LocalAttention(q, m, cfg.heads, rng, cfg.relative_bias) for m in cfg.local_windows]
        if cfg.gsa_enabled:
            self.branches.append(GlobalAttention(q, cfg.global_window, cfg.pool_size, cfg.heads, rng, cfg.pooling))
        self.proj = param(trunc_normal(rng, (c, c)))
        self.norm2 = LayerNorm(c)
        self.mlp = MLP([c, cfg.mlp_ratio * c, c], rng)

    def attend(self, x: Tensor, h: int, w: int, routes=None, gates: Tensor | None = None,
               dense: bool = False) -> Tensor | None:
        """Branch outputs fused by the projection; None when no branch runs.

        ``routes`` (4 ints) selects branches; None means the plain ungated block.
        ``gates`` ([G,4] tensor equal to ``routes`` per sample) carries the
        straight-through gradient back to the router.
        """
        n_br = len(self.branches)
        if routes is None:
            f = T.split(self.norm1(x), 4, axis=-1)
            outs = [br(f[j], h, w) for j, br in enumerate(self.branches)]
            if n_br < 4:
                outs.append(Tensor(np.zeros_like(f[3].data)))
            return T.matmul(T.concat(outs, axis=-1), self.proj)
        routes = np.asarray(routes, dtype=np.int64).copy()
        if n_br < 4:
            routes[3] = 0
        if dense:
            f = T.split(self.norm1(x), 4, axis=-1)
            outs = []
            for j in range(4):
                o = self.branches[j](f[j], h, w) if j < n_br else Tensor(np.zeros_like(f[j].data))
                outs.append(self._gate(o, j, routes, gates))
            return T.matmul(T.concat(outs, axis=-1), self.proj)
        if not routes.any():
            return None
        f = T.split(self.norm1(x), 4, axis=-1)
        blocks = [self._gate(self.branches[j](f[j], h, w), j, routes, gates) if routes[j] else None
                  for j in range(4)]
        return sliceable_projection(blocks, self.proj, routes)

    @staticmethod
    def _gate(o: Tensor, j: int, routes, gates):
        if gates is not None:
            return o * gates[:, j:j + 1].reshape(gates.shape[0], 1, 1)
        return o if routes[j] else o * 0.0

    def __call__(self, x: Tensor, h: int, w: int, routes=None, gates=None, dense=False) -> Tensor:
        o = self.attend(x, h, w, routes, gates, dense)
        x = x if o is None else o + x
        return x + self.mlp(self.norm2(x))


def mstb_forward(f_in: Tensor, h: int, w: int, routes, block: MSTB) -> Tensor:
    return block(f_in, h, w, routes)


class MSTG(Module):
    """Two MSTBs sharing one routing sub-vector, a 3x3 conv, and a group residual."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.blocks = [MSTB(cfg, rng), MSTB(cfg, rng)]
        self.conv = Conv2d(cfg.channels, cfg.channels, 3, rng)

    def __call__(self, x: Tensor, h: int, w: int, routes=None, gates=None, dense=False) -> Tensor:
        y = x
        for blk in self.blocks:
            y = blk(y, h, w, routes, gates, dense)
        b, _, c = y.shape
        y = y.reshape(b, h, w, c).permute(0, 3, 1, 2)
        y = self.conv(y).permute(0, 2, 3, 1).reshape(b, h * w, c)
        return y + x


class Backbone(Module):
    """Shallow conv, N routed groups, body conv with long skip, output head."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.shallow = Conv2d(cfg.in_channels, cfg.channels, 3, rng)
        self.groups = [MSTG(cfg, rng) for _ in range(cfg.n_groups)]
        self.body = Conv2d(cfg.channels, cfg.channels, 3, rng)
        self.head = Conv2d(cfg.channels, cfg.out_channels, 3, rng)

    def _run(self, img: Tensor, routes, gates, dense: bool) -> Tensor:
        b, _, h, w = img.shape
        shallow = self.shallow(img)
        c = shallow.shape[1]
        x = shallow.permute(0, 2, 3, 1).reshape(b, h * w, c)
        for i, grp in enumerate(self.groups):
            r_i = None if routes is None else routes[4 * i:4 * i + 4]
            g_i = None if gates is None else gates[:, 4 * i:4 * i + 4]
            x = grp(x, h, w, r_i, g_i, dense)
        x = x.reshape(b, h, w, c).permute(0, 3, 1, 2)
        x = self.body(x) + shallow
        return self.head(x)

    def __call__(self, img: Tensor, routes=None, dense: bool = False) -> Tensor:
        """Features [B, C_out, H, W].

        ``routes``: None (ungated Baseline), a length-4N 0/1 vector shared by
        the batch, or a [B, 4N] array/tensor with one routing per sample.  A
        grad-tracking tensor routes gradients to the router.  Samples are
        executed grouped by identical routing pattern.
        """
        if routes is None:
            return self._run(img, None, None, dense)
        gates = routes if isinstance(routes, Tensor) else None
        r = np.asarray(routes.data if gates is not None else routes)
        n = self.cfg.routing_length
        if r.shape[-1] != n or r.ndim not in (1, 2):
            raise ContractError(f"routing vector must have length {n}, got shape {r.shape}")
        _check_binary(r)
        if r.ndim == 1:
            if gates is not None:
                gates = gates.reshape(1, n)
            return self._run(img, r.astype(np.int64), gates, dense)
        if r.shape[0] != img.shape[0]:
            raise ContractError(f"{r.shape[0]} routing rows for batch of {img.shape[0]}")
        patterns: "OrderedDict[tuple, list[int]]" = OrderedDict()
        for bi, row in enumerate(r.astype(np.int64)):
            patterns.setdefault(tuple(row), []).append(bi)
        if len(patterns) == 1:
            return self._run(img, r[0].astype(np.int64), gates, dense)
        outs, order = [], []
        for pat, idx in patterns.items():
            sel = np.asarray(idx)
            g = gates[sel] if gates is not None else None
            outs.append(self._run(img[sel], np.asarray(pat), g, dense))
            order.extend(idx)
        inverse = np.argsort(np.asarray(order))
        return T.concat(outs, axis=0)[inverse]


def backbone_forward(img: Tensor, routes, model: Backbone) -> Tensor:
    return model(img, routes)


def param_count(cfg: BackboneConfig) -> int:
    """Trainable scalars of the feature extractor (closed form)."""
    c, q, h = cfg.channels, cfg.channels // 4, cfg.heads
    n_br = 4 if cfg.gsa_enabled else 3
    hidden = cfg.mlp_ratio * c
    per_block = (
        2 * c                              # norm1
        + n_br * q * 3 * q                 # qkv (no bias)
        + c * c                            # projection (no bias)
        + 2 * c                            # norm2
        + c * hidden + hidden + hidden * c + c  # mlp
    )
    if cfg.relative_bias:
        per_block += sum((2 * m - 1) ** 2 * h for m in cfg.local_windows)
    conv = lambda ci, co: 9 * ci * co + co  # noqa: E731
    per_group = 2 * per_block + conv(c, c)
    return (conv(cfg.in_channels, c) + cfg.n_groups * per_group + conv(c, c) + conv(c, cfg.out_channels))
