"""8-bit RGB image files as [3, H, W] float arrays in [0, 1].

PPM (binary P6) is handled natively; PNG goes through Pillow.
"""
from __future__ import annotations

import os

import numpy as np


class ImageIOError(IOError):
    pass


def _quantize(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageIOError(f"expected a [3,H,W] image, got shape {img.shape}")
    v = np.clip(img, 0.0, 1.0) * 255.0
    # round half away from zero (values are non-negative)
    return np.floor(v + 0.5).astype(np.uint8).transpose(1, 2, 0)


def _tokens(data: bytes, count: int):
    """First ``count`` header tokens of a PNM file plus the payload offset."""
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ImageIOError("truncated PPM header")
        out.append(data[i:j])
        i = j
    return out, i + 1  # single whitespace after maxval


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        (magic, w, h, maxval), off = _tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError):
        raise ImageIOError(f"{path}: corrupt PPM header") from None
    if magic != b"P6":
        raise ImageIOError(f"{path}: expected 3-channel RGB (P6), got {magic.decode(errors='replace')}")
    if maxval != 255:
        raise ImageIOError(f"{path}: unsupported bit depth (maxval {maxval}); only 8-bit is supported")
    payload = data[off:off + w * h * 3]
    if len(payload) != w * h * 3:
        raise ImageIOError(f"{path}: truncated PPM payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_ppm(path, img: np.ndarray):
    q = _quantize(img)
    h, w, _ = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_png(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode != "RGB":
                if mode in ("L", "LA", "1", "P", "I", "I;16", "F"):
                    raise ImageIOError(f"{path}: expected 3-channel RGB, got mode {mode}")
                raise ImageIOError(f"{path}: unsupported PNG mode {mode}; expected 8-bit RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageIOError:
        raise
    except Exception as exc:  # Pillow raises several unrelated types on corrupt data
        raise ImageIOError(f"{path}: cannot decode PNG ({exc})") from exc
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_png(path, img: np.ndarray):
    from PIL import Image

    Image.fromarray(_quantize(img), mode="RGB").save(path, format="PNG")


def _format(path, fmt):
    if fmt:
        return fmt.lower()
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".png", ".ppm"):
        return ext[1:]
    raise ImageIOError(f"{path}: unknown image format (use .png or .ppm)")


def read_image(path, fmt: str | None = None) -> np.ndarray:
    if not os.path.exists(path):
        raise ImageIOError(f"{path}: no such file")
    return read_png(path) if _format(path, fmt) == "png" else read_ppm(path)


def write_image(path, img, fmt: str | None = None):
    img = getattr(img, "data", img)
    if _format(path, fmt) == "png":
        write_png(path, img)
    else:
        write_ppm(path, img)


def image_io(mode: str, path, img=None, fmt: str | None = None):
    if mode == "read":
        return read_image(path, fmt)
    if mode == "write":
        return write_image(path, img, fmt)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")
