"""Finite-difference gradient suite: every differentiable primitive plus the tiny end-to-end network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import GlobalAttention, LocalAttention, scaled_dot_attention, window_merge, window_partition
from .config import RunConfig, tiny_config
from .model import SRNetwork
from .tensor import Tensor
from .training.loss import LAMBDA, intensity_loss, l1_loss


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tol

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28s} rel err {self.error:.3e} (tol {self.tol:.0e})"


def _leaf(rng, *shape, low=None):
    data = rng.standard_normal(shape) if low is None else rng.uniform(low[0], low[1], shape)
    return Tensor(data, requires_grad=True, dtype=np.float64)


def _weighted(out: Tensor, rng_seed: int = 99) -> Tensor:
    """Random linear functional of ``out``: exercises every output entry."""
    w = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return T.tsum(out * Tensor(w, dtype=out.dtype))


def _unique_argmax_input(rng, shape, window):
    """Values whose pooling windows have a clear (>= 0.1) winner."""
    x = rng.standard_normal(shape)
    b, c, h, w = shape
    for i in range(0, h - window + 1, window):
        for j in range(0, w - window + 1, window):
            blk = x[:, :, i:i + window, j:j + window]
            blk += np.where(blk == blk.max(axis=(2, 3), keepdims=True), 0.5, 0.0)
    return Tensor(x, requires_grad=True, dtype=np.float64)


def op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def check(name, fn, inputs, tol, h=1e-4):
        err = T.gradcheck(lambda: _weighted(fn()), inputs, h=h, max_entries=10, rng=rng)
        out.append(CheckResult(name, err, tol))

    with T.default_dtype(np.float64):
        a, b = _leaf(rng, 5, 7), _leaf(rng, 7, 3)
        check("matmul", lambda: T.matmul(a, b), [a, b], 1e-6)
        ab, bb = _leaf(rng, 2, 4, 5), _leaf(rng, 2, 5, 3)
        check("matmul (batched)", lambda: T.matmul(ab, bb), [ab, bb], 1e-6)
        x, w, bias = _leaf(rng, 2, 3, 8, 8), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
        check("conv2d", lambda: T.conv2d(x, w, bias, padding=1), [x, w, bias], 1e-6)
        s = _leaf(rng, 3, 4)
        check("sigmoid", lambda: T.sigmoid(s), [s], 1e-8)
        check("gelu", lambda: T.gelu(s), [s], 1e-6)
        u, v = _leaf(rng, 3, 4), _leaf(rng, 3, 4, low=(0.5, 2.0))
        check("add/sub/mul/div", lambda: (u + v) * u - u / v, [u, v], 1e-6)
        sm = _leaf(rng, 6)
        check("softmax", lambda: T.softmax(sm.reshape(1, 6), -1), [sm], 1e-6)
        ln_x, g, bb2 = _leaf(rng, 4, 8), _leaf(rng, 8), _leaf(rng, 8)
        check("layer_norm", lambda: T.layer_norm(ln_x, g, bb2), [ln_x, g, bb2], 1e-5)
        px = _unique_argmax_input(rng, (1, 2, 8, 8), 2)
        check("max pool", lambda: T.pool2d(px, "max", 2), [px], 1e-6)
        check("avg pool", lambda: T.pool2d(px, "avg", 2), [px], 1e-6)
        r = _leaf(rng, 2, 3, 4)
        check("reshape/permute", lambda: r.reshape(6, 4).permute(1, 0), [r], 1e-6)
        check("split/concat", lambda: T.concat(T.split(r, [1, 3], axis=-1)[::-1], axis=-1), [r], 1e-6)
        check("pad/crop", lambda: T.crop(T.pad(r, ((0, 0), (1, 2), (0, 1))), (0, 1, 0), (2, 3, 4)), [r], 1e-6)
        check("sum/mean", lambda: r.sum(axis=1) * r.mean(axis=1), [r], 1e-6)
        ax = _leaf(rng, 3, 4, low=(0.2, 1.0))
        check("abs", lambda: T.tabs(ax - 0.6), [ax], 1e-6)
        check("clamp_max", lambda: T.clamp_max(ax * 2.0, 1.3), [ax], 1e-6)
        gx = _leaf(rng, 2, 9, 5)
        idx = rng.integers(0, 9, (2, 7))
        check("gather_rows", lambda: T.gather_rows(gx, idx), [gx], 1e-6)
        ux = _leaf(rng, 1, 2, 4, 5)
        check("unfold 3x3", lambda: T.unfold(ux, 3), [ux], 1e-6)
        wx = _leaf(rng, 1, 5, 6, 3)
        check("window partition/merge", lambda: window_merge(*window_partition(wx * wx, 4)), [wx], 1e-6)
        q, k, vv = _leaf(rng, 1, 6, 4), _leaf(rng, 1, 5, 4), _leaf(rng, 1, 5, 4)
        check("attention (2 heads)", lambda: scaled_dot_attention(q, k, vv, 2), [q, k, vv], 1e-5)
        lsa = LocalAttention(4, 4, 2, rng)
        f = _leaf(rng, 1, 64, 4)
        check("LSA branch", lambda: lsa(f, 8, 8), [f, lsa.qkv.weight], 1e-5)
        gsa = GlobalAttention(4, 8, 4, 2, rng)
        check("GSA branch", lambda: gsa(f, 8, 8), [f, gsa.qkv.weight], 1e-5)
    return out


def _e2e_loss(net: SRNetwork, img, coords, cell, target, routes):
    feat = net.backbone(img, routes)
    pred = net.upsampler(feat, coords, cell)
    return l1_loss(pred, target)


def _e2e_inputs(cfg: RunConfig, seed: int, hw: int = 16, queries: int = 40):
    rng = np.random.default_rng(seed)
    img = rng.random((1, 3, hw, hw))
    coords = rng.uniform(-0.99, 0.99, (1, queries, 2))
    cell = np.full((1, queries, 2), 2.0 / (2 * hw))
    target = rng.random((1, queries, 3))
    routes = rng.integers(0, 2, cfg.backbone.routing_length)
    routes[:4] = 1
    return img, coords, cell, target, routes


def randomize_parameters(net, seed: int = 0):
    """Replace every parameter by a unit-scale random draw.

    Freshly initialised transformer blocks have near-zero output
    projections, which shrinks the deep gradients to ~1e-10 where central
    differences are dominated by round-off.  Gradient checks run on these
    rescaled weights instead.
    """
    rng = np.random.default_rng(seed)
    for name, p in net.named_parameters().items():
        if p.ndim == 1:
            base = 1.0 if name.endswith("gain") else 0.0
            p.data[...] = base + 0.1 * rng.standard_normal(p.shape)
        else:
            fan_in = p.shape[0] if p.ndim == 2 else int(np.prod(p.shape[1:]))
            p.data[...] = rng.standard_normal(p.shape) / np.sqrt(fan_in)
    return net


def end_to_end_check(cfg: RunConfig | None = None, dtype=np.float64, seed: int = 0,
                     entries: int = 3) -> tuple[CheckResult, CheckResult, bool]:
    """Gradient check of the full routed network (backbone + upsampler) and the router.

    Analytic gradients are computed in ``dtype``; finite differences always
    run in float64 on a copy of the same weights.  Returns (network result,
    router result, gated-off branches received exactly zero gradient).
    """
    cfg = cfg or tiny_config()
    tol = 1e-5 if np.dtype(dtype) == np.float64 else 1e-3
    img, coords, cell, target, routes = _e2e_inputs(cfg, seed)
    with T.default_dtype(dtype):
        net = randomize_parameters(SRNetwork(cfg, seed=seed, with_router=True), seed)
    params = net.named_parameters()

    # analytic pass in the requested precision
    net.zero_grad()
    loss = _e2e_loss(net, Tensor(img, dtype=dtype), coords, cell, target, routes)
    loss.backward()
    analytic = {k: (np.zeros(p.size) if p.grad is None else p.grad.astype(np.float64).reshape(-1))
                for k, p in params.items()}

    zero_ok = True
    for gi in range(cfg.backbone.n_groups):
        for j in range(4):
            if routes[4 * gi + j] == 0 and j < len(net.backbone.groups[gi].blocks[0].branches):
                for blk_i, blk in enumerate(net.backbone.groups[gi].blocks):
                    key = f"backbone.groups.{gi}.blocks.{blk_i}.branches.{j}.qkv.weight"
                    zero_ok &= params[key].grad is None or not np.any(params[key].grad)

    rc = np.random.default_rng(seed + 1).standard_normal(cfg.backbone.routing_length)
    s_val = 2.5

    def router_loss():
        _, beta, p = net.router.probabilities(Tensor(img, dtype=net.router.image.fc.weight.dtype), s_val)
        l_beta, _ = intensity_loss(beta, s_val)
        return T.tsum(p * Tensor(rc[None], dtype=p.dtype)) + LAMBDA * l_beta

    net.zero_grad()
    router_loss().backward()
    router_analytic = {k: (np.zeros(p.size) if p.grad is None else p.grad.astype(np.float64).reshape(-1))
                       for k, p in params.items() if k.startswith("router.")}

    net.to(np.float64)
    pick = np.random.default_rng(seed + 2)
    pairs = {"net": ([], []), "router": ([], [])}
    net_fn = lambda: _e2e_loss(net, Tensor(img, dtype=np.float64), coords, cell, target, routes)  # noqa: E731
    for k, p in params.items():
        idx = pick.choice(p.size, size=min(entries, p.size), replace=False)
        if k.startswith("router."):
            _, est = T.numeric_grad(router_loss, p, 1e-6, idx)
            bucket, ref = pairs["router"], router_analytic[k]
        else:
            _, est = T.numeric_grad(net_fn, p, 1e-6, idx)
            bucket, ref = pairs["net"], analytic[k]
        bucket[0].append(ref[idx])
        bucket[1].append(est)
    worst, worst_router = (T.relative_error(np.concatenate(a), np.concatenate(n))
                           for a, n in (pairs["net"], pairs["router"]))
    name = "end-to-end f64" if np.dtype(dtype) == np.float64 else "end-to-end f32"
    return (CheckResult(f"{name} (network)", worst, tol),
            CheckResult(f"{name} (router)", worst_router, tol), bool(zero_ok))


def run_suite(cfg: RunConfig | None = None, seed: int = 0) -> list[CheckResult]:
    results = op_checks(seed)
    for dtype in (np.float64, np.float32):
        net_res, router_res, zero_ok = end_to_end_check(cfg, dtype, seed)
        results += [net_res, router_res, CheckResult("gated-off zero gradient", 0.0 if zero_ok else 1.0, 0.0)]
    return results
