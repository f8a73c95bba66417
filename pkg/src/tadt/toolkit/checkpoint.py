"""Binary checkpoint format.

Layout (little-endian)::

    "TADT" | u16 version
    u32 n | config text (UTF-8, n bytes)
    u32 count | count x (u16 name length, name, TNSR tensor)
    u8 has_optimizer | [u64 step | u32 count | count x (u16, name, TNSR tensor)]
    u32 n | rng state blob (n bytes)
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..tensor import Tensor, read_tensor, tensor_to_bytes

MAGIC = b"TADT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict = field(default_factory=dict)
    optimizer_step: int | None = None
    optimizer: dict | None = None
    rng_state: bytes = b""

    def meta(self) -> dict:
        """``meta.*`` lines of the config section."""
        out = {}
        for line in self.config_text.splitlines():
            if line.startswith("meta."):
                k, _, v = line.partition("=")
                out[k.strip()[5:]] = v.strip()
        return out

    def run_config_text(self) -> str:
        return "".join(line + "\n" for line in self.config_text.splitlines() if not line.startswith("meta."))


def _write_table(buf: io.BytesIO, tensors: dict):
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(tensor_to_bytes(t))


def _read_exact(fp, n: int) -> bytes:
    data = fp.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def _read_table(fp) -> dict:
    (count,) = struct.unpack("<I", _read_exact(fp, 4))
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(fp, 2))
        name = _read_exact(fp, n).decode("utf-8")
        try:
            out[name] = read_tensor(fp)
        except (ValueError, struct.error) as exc:
            raise CheckpointError(f"truncated checkpoint: tensor {name!r}: {exc}") from None
    return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<H", VERSION))
    cfg = ckpt.config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)) + cfg)
    _write_table(buf, ckpt.tensors)
    if ckpt.optimizer is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01" + struct.pack("<Q", ckpt.optimizer_step or 0))
        _write_table(buf, ckpt.optimizer)
    buf.write(struct.pack("<I", len(ckpt.rng_state)) + ckpt.rng_state)
    return buf.getvalue()


def from_bytes(data: bytes) -> Checkpoint:
    fp = io.BytesIO(data)
    if _read_exact(fp, 4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<H", _read_exact(fp, 2))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version} (expected {VERSION})")
    (n,) = struct.unpack("<I", _read_exact(fp, 4))
    config_text = _read_exact(fp, n).decode("utf-8")
    tensors = _read_table(fp)
    has_opt = _read_exact(fp, 1)[0]
    step, opt = None, None
    if has_opt:
        (step,) = struct.unpack("<Q", _read_exact(fp, 8))
        opt = _read_table(fp)
    (n,) = struct.unpack("<I", _read_exact(fp, 4))
    rng_state = _read_exact(fp, n)
    return Checkpoint(config_text, tensors, step, opt, rng_state)


def save(path, ckpt: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            return from_bytes(fh.read())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None


def rng_to_bytes(rng: np.random.Generator) -> bytes:
    return json.dumps(rng.bit_generator.state, sort_keys=True).encode("utf-8")


def rng_from_bytes(blob: bytes) -> np.random.Generator:
    state = json.loads(blob.decode("utf-8"))
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def tensors_of(module) -> dict[str, Tensor]:
    return dict(module.state_dict())
