"""Local implicit image function: decode a feature map at continuous coordinates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import UpsamplerConfig
from .nn import MLP, Module
from .tensor import ContractError, Tensor


@dataclass
class CoordGrid:
    coords: np.ndarray  # [Q, 2] as (y, x)
    cell: np.ndarray  # [Q, 2]
    height: int
    width: int


def pixel_centers(n: int) -> np.ndarray:
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def make_coord_grid(h_out: int, w_out: int) -> CoordGrid:
    if h_out < 1 or w_out < 1:
        raise ContractError(f"grid extents must be >= 1, got {h_out}x{w_out}")
    ys, xs = np.meshgrid(pixel_centers(h_out), pixel_centers(w_out), indexing="ij")
    coords = np.stack([ys.ravel(), xs.ravel()], axis=-1)
    cell = np.tile(np.array([2.0 / h_out, 2.0 / w_out]), (coords.shape[0], 1))
    return CoordGrid(coords, cell, h_out, w_out)


def _shifts(local_ensemble: bool):
    if local_ensemble:
        return [(-1, -1), (-1, 1), (1, -1), (1, 1)], 1e-6
    return [(0, 0)], 0.0


def ensemble_plan(coords: np.ndarray, h: int, w: int, local_ensemble: bool = True):
    """Latent-code indices, scaled relative offsets, and blend weights.

    coords: [B, Q, 2].  Returns a list with one (flat_index [B,Q],
    rel [B,Q,2]) entry per ensemble member, and weights [K, B, Q].
    """
    shifts, eps = _shifts(local_ensemble)
    ry, rx = 1.0 / h, 1.0 / w
    members, areas = [], []
    for vy, vx in shifts:
        cy = np.clip(coords[..., 0] + vy * ry + eps, -1 + 1e-6, 1 - 1e-6)
        cx = np.clip(coords[..., 1] + vx * rx + eps, -1 + 1e-6, 1 - 1e-6)
        iy = np.clip(np.floor((cy + 1) * h / 2).astype(np.int64), 0, h - 1)
        ix = np.clip(np.floor((cx + 1) * w / 2).astype(np.int64), 0, w - 1)
        rel = np.stack([(coords[..., 0] - (-1 + (2 * iy + 1) / h)) * h,
                        (coords[..., 1] - (-1 + (2 * ix + 1) / w)) * w], axis=-1)
        members.append((iy * w + ix, rel))
        areas.append(np.abs(rel[..., 0] * rel[..., 1]) + 1e-9)
    areas = np.stack(areas)
    if local_ensemble:
        areas = areas[[3, 2, 1, 0]]  # each code is weighted by the diagonally opposite area
    return members, areas / areas.sum(axis=0, keepdims=True)


class LIIF(Module):
    def __init__(self, in_channels: int, cfg: UpsamplerConfig, rng: np.random.Generator):
        self.cfg = cfg
        d_in = in_channels * (9 if cfg.feat_unfold else 1) + 2 + (2 if cfg.cell_decode else 0)
        self.mlp = MLP([d_in] + [cfg.hidden] * (cfg.depth - 1) + [3], rng, init="uniform")
        if cfg.residual:
            # start as the identity on top of the bicubic base
            last = self.mlp.layers[-1]
            last.weight.data[...] = 0.0
            last.bias.data[...] = 0.0

    def latent(self, feature: Tensor) -> Tensor:
        """[B,C,h,w] -> [B, h*w, C'] latent codes (3x3-unfolded when enabled)."""
        feat = T.unfold(feature, 3) if self.cfg.feat_unfold else feature
        b, c, h, w = feat.shape
        return feat.reshape(b, c, h * w).permute(0, 2, 1)

    def query(self, codes: Tensor, h: int, w: int, coords: np.ndarray, cell: np.ndarray | None) -> Tensor:
        """codes from ``latent``; coords [B,Q,2] in [-1,1] -> RGB [B,Q,3]."""
        coords = np.asarray(coords, dtype=np.float64)
        if np.any(np.abs(coords) > 1):
            raise ContractError("query coordinates must lie in [-1, 1]")
        b, q = coords.shape[:2]
        members, weights = ensemble_plan(coords, h, w, self.cfg.local_ensemble)
        dtype = codes.dtype
        inputs = []
        for flat, rel in members:
            parts = [T.gather_rows(codes, flat), Tensor(rel, dtype=dtype)]
            if self.cfg.cell_decode:
                parts.append(Tensor(np.asarray(cell, dtype=np.float64) * np.array([h, w]), dtype=dtype))
            inputs.append(T.concat(parts, axis=-1))
        k = len(members)
        x = T.concat(inputs, axis=1) if k > 1 else inputs[0]
        pred = self.mlp(x)  # [B, K*Q, 3]
        out = None
        for i in range(k):
            wi = Tensor(weights[i][..., None], dtype=dtype)
            term = pred[:, i * q:(i + 1) * q] * wi
            out = term if out is None else out + term
        return out

    def __call__(self, feature: Tensor, coords: np.ndarray, cell: np.ndarray | None) -> Tensor:
        _, _, h, w = feature.shape
        return self.query(self.latent(feature), h, w, coords, cell)

    def upsample(self, feature: Tensor, s: float = None, size: tuple | None = None,
                 chunk: int | None = None) -> Tensor:
        """Render the full image at round(h*s) x round(w*s) (or ``size``)."""
        b, _, h, w = feature.shape
        if size is None:
            if s is None or s < 1:
                raise ContractError(f"scale must be >= 1, got {s}")
            size = (int(round(h * s)), int(round(w * s)))
        grid = make_coord_grid(*size)
        chunk = chunk or self.cfg.chunk
        codes = self.latent(feature)
        coords = np.broadcast_to(grid.coords, (b,) + grid.coords.shape)
        cell = np.broadcast_to(grid.cell, (b,) + grid.cell.shape)
        parts = []
        for start in range(0, grid.coords.shape[0], chunk):
            sl = slice(start, start + chunk)
            parts.append(self.query(codes, h, w, coords[:, sl], cell[:, sl]))
        rgb = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        return rgb.reshape(b, size[0], size[1], 3).permute(0, 3, 1, 2)


def query_rgb(feature: Tensor, coords, cell, upsampler: LIIF) -> Tensor:
    return upsampler(feature, coords, cell)


def full_upsample(feature: Tensor, s: float, upsampler: LIIF, chunk: int | None = None) -> Tensor:
    return upsampler.upsample(feature, s, chunk=chunk)
