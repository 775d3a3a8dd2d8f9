"""Orthogonal-polynomial duality and higher-order fluctuation fields for
IRW, SEP(alpha) and SIP(alpha) on discrete tori."""

from .core_model import (
    DualConfig, Kernel, ModelSpec, Torus, build_kernel, nearest_neighbor_kernel,
)
from .orthopoly import (
    DualityTable, GeneratingPair, ProductDuality, build_table, default_table,
    resolve_convention,
)

__all__ = [
    "DualConfig", "Kernel", "ModelSpec", "Torus", "build_kernel", "nearest_neighbor_kernel",
    "DualityTable", "GeneratingPair", "ProductDuality", "build_table", "default_table",
    "resolve_convention",
]
__version__ = "0.1.0"
