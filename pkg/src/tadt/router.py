"""Task-aware routing controller: (LR image, scale) -> binary branch routing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RouterConfig
from .nn import Conv2d, Linear, Module
from .tensor import ContractError, Tensor


def normalize_scale(s) -> np.ndarray:
    """Map the training scale range U(1, 4) onto [0, 1]."""
    return (np.asarray(s, dtype=np.float64) - 1.0) / 3.0


class ImageBranch(Module):
    def __init__(self, n_routes: int, width: int, rng: np.random.Generator, in_channels: int = 3):
        self.conv1 = Conv2d(in_channels, width, 3, rng)
        self.conv2 = Conv2d(width, width, 3, rng)
        self.fc = Linear(width, n_routes, rng, init="uniform")

    def __call__(self, img: Tensor) -> Tensor:
        x = T.gelu(self.conv1(img))
        x = T.gelu(self.conv2(x))
        x = x.mean(axis=(2, 3))
        return self.fc(x)


class ScaleBranch(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        self.fc1 = Linear(1, width, rng, init="uniform")
        self.fc2 = Linear(width, width, rng, init="uniform")
        self.fc3 = Linear(width, 1, rng, init="uniform")

    def __call__(self, s) -> Tensor:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        if np.any(s < 1):
            raise ContractError(f"scale must be >= 1, got {s}")
        x = Tensor(normalize_scale(s).reshape(-1, 1), dtype=self.fc1.weight.dtype)
        x = T.gelu(self.fc1(x))
        x = T.gelu(self.fc2(x))
        return T.sigmoid(self.fc3(x))  # [B, 1]


def modulate(e: Tensor, beta: Tensor, n_groups: int) -> Tensor:
    """p = min(beta * 4N * sigmoid(e) / sum(sigmoid(e)), 1), per sample."""
    if e.shape[-1] != 4 * n_groups:
        raise ContractError(f"logits of length {e.shape[-1]} for N={n_groups}")
    sig = T.sigmoid(e)
    total = sig.sum(axis=-1, keepdims=True)
    return T.clamp_max(beta * (4.0 * n_groups) * sig / total, 1.0)


def _bernoulli_ste(p: Tensor, draws: np.ndarray) -> Tensor:
    """Forward: the sampled 0/1 values; backward: identity to p."""
    return T.make_op(draws.astype(p.dtype), (p,), lambda g: (g,), "bernoulli_ste")


def sample_routes(p: Tensor, mode: str = "train", rng: np.random.Generator | None = None,
                  threshold: float = 0.5) -> Tensor:
    """Binary routing from probabilities.

    ``train`` (and ``sample``) draws Bernoulli(p) from ``rng``; ``eval`` is
    deterministic, r = 1 iff p >= threshold.  Either way the backward pass
    hands dL/dr straight to p.
    """
    pd = p.data
    if np.any(pd < 0) or np.any(pd > 1) or np.any(np.isnan(pd)):
        raise ContractError("probabilities must lie in [0, 1]")
    if mode in ("train", "sample"):
        if rng is None:
            raise ContractError("sampling mode needs a random generator")
        draws = rng.random(pd.shape) < pd
    elif mode == "eval":
        draws = pd >= threshold
    else:
        raise ContractError(f"unknown routing mode {mode!r}")
    return _bernoulli_ste(p, draws)


@dataclass
class RouteDecision:
    logits: Tensor
    beta: Tensor
    probs: Tensor
    routes: Tensor


class Router(Module):
    """Image branch -> logits e, scale branch -> intensity beta, combined by ``modulate``."""

    def __init__(self, n_groups: int, cfg: RouterConfig, rng: np.random.Generator):
        self.n_groups = n_groups
        self.threshold = cfg.threshold
        self.image = ImageBranch(4 * n_groups, cfg.hidden, rng)
        self.scale = ScaleBranch(cfg.scale_hidden, rng)

    def probabilities(self, img: Tensor, s):
        e = self.image(img)
        s = np.broadcast_to(np.atleast_1d(np.asarray(s, dtype=np.float64)), (img.shape[0],))
        beta = self.scale(s)
        return e, beta, modulate(e, beta, self.n_groups)

    def __call__(self, img: Tensor, s, mode: str = "eval", rng: np.random.Generator | None = None) -> RouteDecision:
        e, beta, p = self.probabilities(img, s)
        if mode == "all-on":
            r = T.make_op(np.ones_like(p.data), (p,), lambda g: (g,), "all_on")
        else:
            r = sample_routes(p, mode, rng, self.threshold)
        return RouteDecision(e, beta, p, r)


def image_branch(img: Tensor, router: Router) -> Tensor:
    return router.image(img)


def scale_branch(s, router: Router) -> Tensor:
    return router.scale(s)
