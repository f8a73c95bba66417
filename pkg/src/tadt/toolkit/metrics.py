import numpy as np

from ..tensor import DimensionError, Tensor


def psnr(a, b, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE) over every pixel and channel; inf for identical inputs."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def format_db(value: float) -> str:
    return "inf" if np.isinf(value) else f"{value:.4f}"
