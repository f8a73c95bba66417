"""Task-aware dynamic transformer for arbitrary-scale super-resolution, in numpy.

A routed multi-scale window-attention backbone, a small controller that
picks which attention branches run for a given image and scale, and an
implicit-function decoder that samples RGB at arbitrary coordinates.
"""
from .config import RunConfig, full_config, tiny_config, toy_config
from .flops import count_flops, measure_flops
from .model import SRNetwork
from .router import RouteDecision, Router
from .tensor import ContractError, DimensionError, Tensor

__all__ = [
    "RunConfig", "full_config", "tiny_config", "toy_config",
    "SRNetwork", "Router", "RouteDecision",
    "count_flops", "measure_flops",
    "Tensor", "ContractError", "DimensionError",
]
__version__ = "0.1.0"
