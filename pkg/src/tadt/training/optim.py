"""Adam with bias correction, operating on parameter arrays in place."""
from __future__ import annotations

import numpy as np

from ..tensor import Tensor


def adam_step(params: dict, grads: dict, state: dict, lr: float = 1e-4,
              betas=(0.9, 0.999), eps: float = 1e-8):
    """One update. ``state`` holds 't' plus per-name 'm'/'v' dicts; mutated in place."""
    b1, b2 = betas
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    m, v = state.setdefault("m", {}), state.setdefault("v", {})
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in m:
            m[name] = np.zeros_like(p.data)
            v[name] = np.zeros_like(p.data)
        m[name] *= b1
        m[name] += (1.0 - b1) * g
        v[name] *= b2
        v[name] += (1.0 - b2) * (g * g)
        p.data -= (lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)).astype(p.dtype)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.state: dict = {"t": 0, "m": {}, "v": {}}

    def step(self, lr: float | None = None):
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr if lr is None else lr, self.betas, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.state["m"]:
            out[f"m.{k}"] = self.state["m"][k]
            out[f"v.{k}"] = self.state["v"][k]
        return out

    def load_state_tensors(self, t: int, tensors: dict):
        self.state = {"t": int(t), "m": {}, "v": {}}
        for key, arr in tensors.items():
            kind, name = key.split(".", 1)
            self.state[kind][name] = np.array(arr.data if isinstance(arr, Tensor) else arr)
