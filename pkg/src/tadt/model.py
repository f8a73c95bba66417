"""Backbone + upsampler (+ router) assembled into one super-resolution network."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import Backbone
from .config import RunConfig
from .nn import Module
from .router import RouteDecision, Router
from .tensor import ContractError, Tensor
from .training.resample import bicubic_sample, resize_to
from .upsampler import LIIF


class SRNetwork(Module):
    """Feature extractor with an implicit-function upsampler.

    Without a router this is the Baseline (every branch always runs).  With a
    router, routing modes are ``sample`` (Bernoulli, needs ``rng``),
    ``threshold`` (p >= threshold) and ``all-on``.
    """

    def __init__(self, cfg: RunConfig, seed: int = 0, with_router: bool = False):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(cfg.backbone, rng)
        self.upsampler = LIIF(cfg.backbone.out_channels, cfg.upsampler, rng)
        self.router = None
        if with_router:
            self.add_router(seed)

    def add_router(self, seed: int = 0):
        # separate stream so backbone/upsampler init does not depend on the router
        rng = np.random.default_rng([seed, 1])
        self.router = Router(self.cfg.backbone.n_groups, self.cfg.router, rng)
        return self.router

    def features(self, img: Tensor, s=None, routing: str = "threshold",
                 rng: np.random.Generator | None = None) -> tuple[Tensor, RouteDecision | None]:
        if self.router is None or routing == "baseline":
            return self.backbone(img), None
        if s is None:
            raise ContractError("routed inference needs the scale")
        mode = {"sample": "train", "train": "train", "threshold": "eval", "eval": "eval",
                "all-on": "all-on"}.get(routing)
        if mode is None:
            raise ContractError(f"unknown routing {routing!r}")
        dec = self.router(img, s, mode, rng)
        return self.backbone(img, dec.routes), dec

    def __call__(self, img: Tensor, coords, cell, s=None, routing: str = "threshold", rng=None):
        feat, dec = self.features(img, s, routing, rng)
        rgb = self.upsampler(feat, coords, cell)
        if self.cfg.upsampler.residual:
            rgb = rgb + Tensor(bicubic_sample(img.data, np.asarray(coords)), dtype=rgb.dtype)
        return rgb, dec

    def super_resolve(self, img: Tensor, s: float, routing: str = "threshold", rng=None,
                      size: tuple | None = None) -> tuple[np.ndarray, RouteDecision | None]:
        """Whole-image inference; returns RGB [B,3,H',W'] clipped to [0,1]."""
        with T.no_grad():
            feat, dec = self.features(img, s, routing, rng)
            out = self.upsampler.upsample(feat, s, size=size).data
        if self.cfg.upsampler.residual:
            h_out, w_out = out.shape[-2:]
            out = out + np.stack([resize_to(x, h_out, w_out) for x in img.data]).astype(out.dtype)
        return np.clip(out, 0.0, 1.0), dec
