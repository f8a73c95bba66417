"""Separable bicubic resampling with antialiasing on downscale."""
from __future__ import annotations

import numpy as np

from ..tensor import ContractError, Tensor


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """[n_out, n_in] interpolation weights; rows sum to one.

    Sample i sits at (i + 0.5) * n_in / n_out in input pixel units.  On
    downscale the kernel is stretched by the scale factor; taps falling
    outside the image are dropped and the row renormalized.
    """
    scale = n_in / n_out
    stretch = max(scale, 1.0) if antialias else 1.0
    support = 2.0 * stretch
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * scale
        lo = max(int(np.floor(center - support)), 0)
        hi = min(int(np.ceil(center + support)), n_in)
        j = np.arange(lo, hi)
        w = cubic((j + 0.5 - center) / stretch)
        mat[i, lo:hi] = w / w.sum()
    return mat


def resize_to(img, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize [C,H,W] (or [H,W]) to the given extents."""
    arr = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ContractError(f"degenerate output extent {out_h}x{out_w}")
    h, w = arr.shape[-2:]
    mh = resize_matrix(h, out_h, antialias)
    mw = resize_matrix(w, out_w, antialias)
    return (mh @ arr @ mw.T).astype(arr.dtype, copy=False)


def bicubic_resize(img, s_down: float) -> np.ndarray:
    """Downscale by ``s_down``: output extents round(H / s_down), round(W / s_down)."""
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    h, w = arr.shape[-2:]
    return resize_to(arr, int(round(h / s_down)), int(round(w / s_down)))


def _taps(coord: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Four tap indices and renormalized cubic weights per coordinate in [-1, 1]."""
    center = (coord + 1.0) * n / 2.0  # continuous position in pixel units
    base = np.floor(center - 0.5).astype(np.int64) - 1
    idx = base[..., None] + np.arange(4)
    w = cubic(idx + 0.5 - center[..., None])
    valid = (idx >= 0) & (idx < n)
    w = np.where(valid, w, 0.0)
    w /= w.sum(axis=-1, keepdims=True)
    return np.clip(idx, 0, n - 1), w


def bicubic_sample(img: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Bicubic interpolation of [B,C,h,w] images at [B,Q,2] (y, x) coordinates -> [B,Q,C].

    Uses the same kernel and border renormalization as ``resize_to``, so on a
    pixel-center grid of an upscale it reproduces ``resize_to`` up to rounding.
    """
    img = np.asarray(img, dtype=np.float64)
    b, c, h, w = img.shape
    iy, wy = _taps(np.asarray(coords[..., 0], dtype=np.float64), h)
    ix, wx = _taps(np.asarray(coords[..., 1], dtype=np.float64), w)
    out = np.zeros(coords.shape[:2] + (c,))
    bidx = np.arange(b)[:, None]
    for a in range(4):
        for k in range(4):
            vals = img[bidx, :, iy[..., a], ix[..., k]]  # B,Q,C
            out += (wy[..., a] * wx[..., k])[..., None] * vals
    return out
