"""L1 reconstruction loss plus the masked intensity penalty on beta."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import DimensionError, Tensor

ALPHAS = (0.25, 0.25, 0.5)
LAMBDA = 2e-4


def intensity_threshold(s, alphas=ALPHAS):
    a1, a2, a3 = alphas
    return a1 + a2 * np.asarray(s, dtype=np.float64) ** a3


def intensity_loss(beta: Tensor, s, alphas=ALPHAS) -> tuple[Tensor, np.ndarray]:
    """L_beta = beta * M, averaged over the batch, with M = [beta >= t(s)] held constant."""
    b = beta.reshape(-1)
    mask = (b.data >= intensity_threshold(s, alphas)).astype(b.dtype)
    return T.mean(b * Tensor(mask, dtype=b.dtype)), mask


def l1_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    return T.mean(T.tabs(pred - target))


@dataclass
class LossBreakdown:
    l1: Tensor
    l_beta: Tensor | None
    mask: np.ndarray | None
    total: Tensor


def total_loss(pred: Tensor, target, beta: Tensor | None = None, s=None, lam: float = LAMBDA,
               alphas=ALPHAS) -> LossBreakdown:
    l1 = l1_loss(pred, target)
    if beta is None or lam == 0:
        return LossBreakdown(l1, None, None, l1)
    l_beta, mask = intensity_loss(beta, s, alphas)
    return LossBreakdown(l1, l_beta, mask, l1 + lam * l_beta)
