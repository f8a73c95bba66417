"""Held-out PSNR (model vs bicubic) and per-image dynamic FLOPs."""
from __future__ import annotations

import numpy as np

from ..flops import count_flops
from ..tensor import Tensor, get_default_dtype
from ..toolkit.metrics import psnr
from .data import eval_pair
from .resample import resize_to


def bicubic_upscale(lr: np.ndarray, size: tuple) -> np.ndarray:
    return np.clip(resize_to(lr, size[0], size[1]), 0.0, 1.0)


def evaluate(model, images, scale: float, routing: str = "threshold", rng=None) -> dict:
    n = model.cfg.backbone.routing_length
    rows = []
    for hr in images:
        hr, lr = eval_pair(hr, scale)
        size = hr.shape[1:]
        sr, dec = model.super_resolve(Tensor(lr[None], dtype=get_default_dtype()), scale, routing, rng, size=size)
        routes = np.ones(n, dtype=np.int64) if dec is None else dec.routes.data[0].astype(np.int64)
        rep = count_flops(model.cfg, routes, lr.shape[1], lr.shape[2], scale,
                          include_router=dec is not None)
        rows.append({
            "psnr": psnr(sr[0], hr),
            "bicubic_psnr": psnr(bicubic_upscale(lr, size), hr),
            "beta": None if dec is None else float(dec.beta.data[0, 0]),
            "active_branches": int(routes.sum()),
            "dynamic_flops": rep.dynamic_for_r,
            "static_flops": rep.static_all_on,
        })
    out = {
        "scale": scale,
        "psnr": float(np.mean([r["psnr"] for r in rows])),
        "bicubic_psnr": float(np.mean([r["bicubic_psnr"] for r in rows])),
        "mean_dynamic_flops": float(np.mean([r["dynamic_flops"] for r in rows])),
        "mean_static_flops": float(np.mean([r["static_flops"] for r in rows])),
        "mean_active_branches": float(np.mean([r["active_branches"] for r in rows])),
        "per_image": rows,
    }
    betas = [r["beta"] for r in rows if r["beta"] is not None]
    out["mean_beta"] = float(np.mean(betas)) if betas else None
    return out
