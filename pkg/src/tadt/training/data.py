"""Procedural toy images and LR/HR training-pair synthesis."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from ..upsampler import pixel_centers
from .resample import resize_to

log = logging.getLogger(__name__)

TOY_SEED = 20240611


class ImageTooSmall(ValueError):
    pass


@dataclass
class TrainSample:
    lr: np.ndarray  # [3, p, p]
    scale: float
    coords: np.ndarray  # [p*p, 2]
    rgb: np.ndarray  # [p*p, 3]
    cell: np.ndarray  # [p*p, 2]
    hr_crop: np.ndarray  # [3, side, side]


@dataclass
class Batch:
    lr: np.ndarray  # [B, 3, p, p]
    scale: np.ndarray  # [B]
    coords: np.ndarray  # [B, Q, 2]
    rgb: np.ndarray  # [B, Q, 3]
    cell: np.ndarray  # [B, Q, 2]


# ---------------------------------------------------------------- toy images


def _gradient(rng, h, w):
    ys, xs = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    a, b = rng.uniform(-1, 1, 2)
    t = a * ys + b * xs
    t = (t - t.min()) / (np.ptp(t) + 1e-9)
    c0, c1 = rng.random(3), rng.random(3)
    return c0[:, None, None] * (1 - t) + c1[:, None, None] * t


def _checker(rng, h, w):
    period = rng.integers(4, 17)
    angle = rng.uniform(0, np.pi)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (np.cos(angle) * xs + np.sin(angle) * ys) / period
    v = (-np.sin(angle) * xs + np.cos(angle) * ys) / period
    mask = (np.floor(u) + np.floor(v)) % 2
    c0, c1 = rng.random(3), rng.random(3)
    return np.where(mask[None] > 0, c1[:, None, None], c0[:, None, None])


def _gabor(rng, h, w):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((3, h, w))
    for _ in range(3):
        freq = rng.uniform(0.05, 0.3)
        theta = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(0.2, 0.6) * min(h, w)
        env = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma ** 2))
        wave = np.cos(2 * np.pi * freq * (np.cos(theta) * xs + np.sin(theta) * ys) + rng.uniform(0, 2 * np.pi))
        out += rng.uniform(0.2, 0.5, 3)[:, None, None] * env * wave
    return 0.5 + out


def _polygons(rng, h, w, base=None):
    canvas = Image.fromarray(np.zeros((h, w, 3), np.uint8) if base is None else
                             (np.clip(base, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8))
    draw = ImageDraw.Draw(canvas)
    for _ in range(rng.integers(3, 9)):
        n = rng.integers(3, 7)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(0.08, 0.35) * min(h, w)
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        pts = [(float(cx + r * np.cos(a)), float(cy + r * np.sin(a))) for a in ang]
        draw.polygon(pts, fill=tuple(int(v) for v in rng.integers(0, 256, 3)))
    return np.asarray(canvas, dtype=np.float64).transpose(2, 0, 1) / 255.0


def toy_image(rng: np.random.Generator, h: int, w: int, kind: int) -> np.ndarray:
    """One procedural RGB image in [0,1], quantized to 8 bits."""
    if kind == 0:
        img = _gradient(rng, h, w)
    elif kind == 1:
        img = _checker(rng, h, w)
    elif kind == 2:
        img = _gabor(rng, h, w)
    else:
        img = _gradient(rng, h, w)
    if kind == 3 or rng.random() < 0.5:
        img = _polygons(rng, h, w, img)
    return np.round(np.clip(img, 0, 1) * 255) / 255.0


def toy_dataset(n: int = 64, min_size: int = 64, max_size: int = 128, seed: int = TOY_SEED) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    images = []
    for i in range(n):
        h, w = rng.integers(min_size, max_size + 1, 2)
        images.append(toy_image(rng, int(h), int(w), i % 4))
    return images


def load_folder(path: str) -> list[np.ndarray]:
    from ..toolkit.imageio import read_image

    names = sorted(f for f in os.listdir(path) if f.lower().endswith((".png", ".ppm")))
    return [read_image(os.path.join(path, f)) for f in names]


# ---------------------------------------------------------------- pair synthesis


def downsample(crop: np.ndarray, size: int) -> np.ndarray:
    return np.clip(resize_to(crop, size, size), 0.0, 1.0)


def synthesize_pair(hr: np.ndarray, rng: np.random.Generator, patch: int = 48,
                    scale_range: tuple = (1.0, 4.0), scale: float | None = None) -> TrainSample:
    """Random-scale HR crop, its bicubic LR patch, and patch**2 sampled HR pixels."""
    s = float(rng.uniform(*scale_range)) if scale is None else float(scale)
    side = int(round(patch * s))
    _, h, w = hr.shape
    if side > h or side > w:
        raise ImageTooSmall(f"image {h}x{w} too small for a {side}x{side} crop at scale {s:.3f}")
    y0 = int(rng.integers(0, h - side + 1))
    x0 = int(rng.integers(0, w - side + 1))
    crop = hr[:, y0:y0 + side, x0:x0 + side]
    lr = downsample(crop, patch)
    q = patch * patch
    pick = rng.choice(side * side, size=q, replace=False)
    iy, ix = np.divmod(pick, side)
    centers = pixel_centers(side)
    coords = np.stack([centers[iy], centers[ix]], axis=-1)
    rgb = crop[:, iy, ix].T
    cell = np.full((q, 2), 2.0 / side)
    return TrainSample(lr, s, coords, rgb, cell, crop)


def make_batch(images: list[np.ndarray], rng: np.random.Generator, batch_size: int, patch: int,
               scale_range: tuple = (1.0, 4.0), max_tries: int = 100) -> Batch:
    samples = []
    tries = 0
    while len(samples) < batch_size:
        img = images[int(rng.integers(len(images)))]
        try:
            samples.append(synthesize_pair(img, rng, patch, scale_range))
        except ImageTooSmall as exc:
            tries += 1
            log.warning("skipping sample: %s", exc)
            if tries > max_tries:
                raise
    return Batch(
        lr=np.stack([s.lr for s in samples]),
        scale=np.array([s.scale for s in samples]),
        coords=np.stack([s.coords for s in samples]),
        rgb=np.stack([s.rgb for s in samples]),
        cell=np.stack([s.cell for s in samples]),
    )


def eval_pair(hr: np.ndarray, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Crop HR to a multiple of s (for integer s) and derive its LR input."""
    _, h, w = hr.shape
    if float(s).is_integer():
        si = int(s)
        h, w = h - h % si, w - w % si
    hr = hr[:, :h, :w]
    lh, lw = int(round(h / s)), int(round(w / s))
    return hr, np.clip(resize_to(hr, lh, lw), 0.0, 1.0)
