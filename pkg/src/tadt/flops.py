"""Analytic FLOPs accounting (static and routing-dependent) plus an instrumented oracle.

Convention: one multiply-accumulate = 2 FLOPs; bias adds, activations,
normalization, softmax, pooling, residual adds and blending cost 1 FLOP per
output scalar.  Counts are per sample.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .tensor import ContractError

CONVENTION = ("1 MAC = 2 FLOPs (matmul, conv, linear, attention); "
              "1 FLOP per output scalar for bias/activation/norm/softmax/pool/residual/blend")


@dataclass
class Cost:
    macs: int = 0
    elementwise: int = 0

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.elementwise

    def __iadd__(self, other: "Cost"):
        self.macs += other.macs
        self.elementwise += other.elementwise
        return self

    def to_dict(self) -> dict:
        return {"macs": self.macs, "elementwise": self.elementwise, "flops": self.flops}


@dataclass
class FlopsReport:
    components: dict = field(default_factory=dict)  # name -> Cost
    groups: list = field(default_factory=list)  # per MSTG: part -> Cost
    static_all_on: int = 0
    dynamic_for_r: int = 0
    height: int = 0
    width: int = 0
    scale: float = 1.0
    active_branches: int = 0
    convention: str = CONVENTION

    def matmul_conv_flops(self, parts=None) -> int:
        parts = parts or list(self.components)
        return sum(2 * self.components[p].macs for p in parts if p in self.components)

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "scale": self.scale,
            "active_branches": self.active_branches,
            "components": {k: v.to_dict() for k, v in self.components.items()},
            "groups": [{k: v.to_dict() for k, v in g.items()} for g in self.groups],
            "static_all_on": self.static_all_on,
            "dynamic_for_r": self.dynamic_for_r,
            "convention": self.convention,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def pretty(self) -> str:
        lines = [f"FLOPs for {self.height}x{self.width} input at scale {self.scale:g} "
                 f"({self.active_branches} active branches)"]
        for name, cost in self.components.items():
            lines.append(f"  {name:<12s} {cost.flops / 1e9:14.4f} GFLOPs")
        for i, g in enumerate(self.groups):
            parts = ", ".join(f"{k}={v.flops / 1e9:.3f}G" for k, v in g.items())
            lines.append(f"    group {i}: {parts}")
        lines.append(f"  static (all on) {self.static_all_on / 1e9:12.4f} GFLOPs")
        lines.append(f"  dynamic         {self.dynamic_for_r / 1e9:12.4f} GFLOPs")
        lines.append(f"  convention: {self.convention}")
        return "\n".join(lines)


def _conv(h: int, w: int, cin: int, cout: int, k: int = 3) -> Cost:
    return Cost(h * w * cin * k * k * cout, h * w * cout)


def _linear(rows: int, n_in: int, n_out: int, bias: bool = True) -> Cost:
    return Cost(rows * n_in * n_out, rows * n_out if bias else 0)


def _windows(h: int, w: int, m: int) -> int:
    return (-(-h // m)) * (-(-w // m))


def branch_cost(cfg, j: int, h: int, w: int) -> tuple[Cost, Cost]:
    """(qkv, attention) cost of branch j of one MSTB."""
    bc = cfg.backbone if isinstance(cfg, RunConfig) else cfg
    q = bc.channels // 4
    hw = h * w
    qkv = _linear(hw, q, 3 * q, bias=False)
    if j < 3:
        m = bc.local_windows[j]
        nw = _windows(h, w, m)
        t = m * m
        att = Cost(2 * nw * t * t * q, 2 * nw * bc.heads * t * t)  # scale + softmax
        if bc.relative_bias:
            att.elementwise += nw * bc.heads * t * t
    else:
        m, d = bc.global_window, bc.pool_size
        nw = _windows(h, w, m)
        t, tk = m * m, d * d
        att = Cost(2 * nw * t * tk * q, 2 * nw * bc.heads * t * tk)
        if bc.pooling == "random":
            att.macs += 2 * nw * q * t * tk
        else:
            att.elementwise += 2 * nw * tk * q
    return qkv, att


def mstb_cost(cfg, routes, h: int, w: int) -> dict:
    bc = cfg.backbone if isinstance(cfg, RunConfig) else cfg
    c, hw = bc.channels, h * w
    routes = [int(v) for v in routes]
    if not bc.gsa_enabled:
        routes[3] = 0
    k = sum(routes)
    parts = {"qkv": Cost(), "attention": Cost(), "projection": Cost(), "mlp": Cost(), "norm_residual": Cost()}
    for j in range(4):
        if routes[j]:
            qkv, att = branch_cost(bc, j, h, w)
            parts["qkv"] += qkv
            parts["attention"] += att
    if k:
        parts["projection"] = Cost(hw * (k * c // 4) * c, 0)
        parts["norm_residual"] += Cost(0, 2 * hw * c)  # norm1 + attention residual
    hidden = bc.mlp_ratio * c
    parts["mlp"] += _linear(hw, c, hidden)
    parts["mlp"] += Cost(0, hw * hidden)  # GELU
    parts["mlp"] += _linear(hw, hidden, c)
    parts["norm_residual"] += Cost(0, 2 * hw * c)  # norm2 + MLP residual
    return parts


def backbone_costs(cfg: RunConfig, routes, h: int, w: int) -> tuple[dict, list]:
    bc = cfg.backbone
    c = bc.channels
    comps = {"shallow": _conv(h, w, bc.in_channels, c)}
    groups = []
    for i in range(bc.n_groups):
        r_i = routes[4 * i:4 * i + 4]
        g = {"qkv": Cost(), "attention": Cost(), "projection": Cost(), "mlp": Cost(), "norm_residual": Cost()}
        for _ in range(2):
            for k, v in mstb_cost(cfg, r_i, h, w).items():
                g[k] += v
        g["conv"] = _conv(h, w, c, c)
        g["conv"].elementwise += h * w * c  # group residual
        groups.append(g)
    total = Cost()
    for g in groups:
        for v in g.values():
            total += v
    comps["groups"] = total
    comps["body"] = _conv(h, w, c, c)
    comps["body"].elementwise += h * w * c  # long skip
    comps["head"] = _conv(h, w, c, bc.out_channels)
    return comps, groups


def router_cost(cfg: RunConfig, h: int, w: int) -> Cost:
    rc, n = cfg.router, cfg.backbone.routing_length
    cost = _conv(h, w, cfg.backbone.in_channels, rc.hidden)
    cost.elementwise += h * w * rc.hidden
    cost += _conv(h, w, rc.hidden, rc.hidden)
    cost.elementwise += h * w * rc.hidden + h * w * rc.hidden  # GELU + average pool
    cost += _linear(1, rc.hidden, n)
    sh = rc.scale_hidden
    cost += _linear(1, 1, sh)
    cost += _linear(1, sh, sh)
    cost += _linear(1, sh, 1)
    cost.elementwise += 2 * sh + 1  # GELUs + sigmoid
    cost.elementwise += 4 * n  # modulation: sigmoid, normalize, scale, clamp
    return cost


def upsampler_cost(cfg: RunConfig, h: int, w: int, s: float) -> Cost:
    uc = cfg.upsampler
    q = int(round(h * s)) * int(round(w * s))
    k = 4 if uc.local_ensemble else 1
    rows = k * q
    d_in = cfg.backbone.out_channels * (9 if uc.feat_unfold else 1) + 2 + (2 if uc.cell_decode else 0)
    dims = [d_in] + [uc.hidden] * (uc.depth - 1) + [3]
    cost = Cost()
    for a, b in zip(dims[:-1], dims[1:]):
        cost += _linear(rows, a, b)
    cost.elementwise += rows * uc.hidden * (uc.depth - 1)  # GELU
    cost.elementwise += 2 * k * q * 3  # weighted blend
    if uc.residual:
        cost.elementwise += q * 3 * (2 * 16 + 1)  # 4x4 cubic taps per channel, then the add
    return cost


def count_flops(cfg: RunConfig, routes, h: int, w: int, s: float = 2.0,
                include_router: bool = True, include_upsampler: bool = True) -> FlopsReport:
    n = cfg.backbone.routing_length
    routes = np.asarray(routes, dtype=np.int64).reshape(-1)
    if routes.size != n:
        raise ContractError(f"routing vector must have length {n}, got {routes.size}")
    if h < 1 or w < 1 or s < 1:
        raise ContractError(f"need H, W >= 1 and s >= 1, got {h}x{w}, s={s}")

    def total_for(r):
        comps, groups = backbone_costs(cfg, r, h, w)
        if include_router:
            comps["router"] = router_cost(cfg, h, w)
        if include_upsampler:
            comps["upsampler"] = upsampler_cost(cfg, h, w, s)
        return comps, groups, sum(c.flops for c in comps.values())

    comps, groups, dyn = total_for(routes)
    _, _, static = total_for(np.ones(n, dtype=np.int64))
    active = routes.copy()
    if not cfg.backbone.gsa_enabled:
        active[3::4] = 0
    return FlopsReport(comps, groups, static, dyn, h, w, float(s), int(active.sum()))


def projection_macs(cfg, routes, h: int, w: int) -> int:
    """Multiply-accumulates of one MSTB's sliced projection."""
    return mstb_cost(cfg, routes, h, w)["projection"].macs


MEASURE_LIMITS = {"channels": 64, "pixels": 64 * 64, "n_groups": 4}


def measure_flops(cfg: RunConfig, routes, h: int, w: int, s: float | None = None,
                  include_router: bool = False, seed: int = 0) -> int:
    """Execute the network with MAC instrumentation; returns 2 x observed MACs.

    Covers the backbone, plus the router when ``include_router`` and the
    upsampler when ``s`` is given.
    """
    from .model import SRNetwork

    bc = cfg.backbone
    if bc.channels > MEASURE_LIMITS["channels"] or h * w > MEASURE_LIMITS["pixels"] \
            or bc.n_groups > MEASURE_LIMITS["n_groups"]:
        raise ContractError(f"measure_flops is limited to tiny configs {MEASURE_LIMITS}; "
                            f"got C={bc.channels}, N={bc.n_groups}, {h}x{w}")
    net = SRNetwork(cfg, seed=seed, with_router=include_router)
    img = T.Tensor(np.random.default_rng(seed).random((1, bc.in_channels, h, w)))
    with T.no_grad(), T.count_macs() as counter:
        feat = net.backbone(img, np.asarray(routes))
        if include_router:
            net.router.probabilities(img, 2.0 if s is None else s)
        if s is not None:
            net.upsampler.upsample(feat, s)
    return 2 * counter.total
