"""Parameter containers and the small set of layers the model is built from."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Attribute-registered parameter tree.

    Tensors with ``requires_grad`` are parameters; tensors listed in
    ``_buffer_names`` are saved with the model but never trained.
    """

    _buffer_names: tuple = ()

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad and name not in self._buffer_names:
                    out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{full}.{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and name in self._buffer_names:
                out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_buffers(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_buffers(f"{full}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> "OrderedDict[str, Tensor]":
        state = self.named_parameters()
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict, strict: bool = True):
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for k, t in own.items():
            if k in state:
                src = state[k].data if isinstance(state[k], Tensor) else np.asarray(state[k])
                if src.shape != t.shape:
                    raise T.DimensionError(f"{k}: checkpoint shape {src.shape} vs model {t.shape}")
                t.data[...] = src

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def to(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (used for f64 verification)."""
        for t in list(self.named_parameters().values()) + list(self.named_buffers().values()):
            t.data = t.data.astype(dtype)
            t.grad = None
        return self


def trunc_normal(rng: np.random.Generator, shape, std=0.02) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(bad.sum())
        bad = np.abs(x) > 2.0
    return x * std


def param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True, dtype=T.get_default_dtype())


class Linear(Module):
    """y = x W + b with W stored as [in, out]."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, init: str = "trunc"):
        self.n_in, self.n_out = n_in, n_out
        if init == "trunc":
            w = trunc_normal(rng, (n_in, n_out))
            b = np.zeros(n_out)
        else:
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, (n_in, n_out))
            b = rng.uniform(-bound, bound, n_out)
        self.weight = param(w)
        self.bias = param(b) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        fan_in = c_in * k * k
        bound = 1.0 / np.sqrt(fan_in)
        self.k = k
        self.weight = param(rng.uniform(-bound, bound, (c_out, c_in, k, k)))
        self.bias = param(rng.uniform(-bound, bound, c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, padding=self.k // 2)


class LayerNorm(Module):
    def __init__(self, c: int):
        self.gain = param(np.ones(c))
        self.bias = param(np.zeros(c))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Linear layers with GELU between them (none after the last)."""

    def __init__(self, dims, rng: np.random.Generator, init: str = "trunc"):
        self.layers = [Linear(a, b, rng, init=init) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.gelu(x)
        return x
