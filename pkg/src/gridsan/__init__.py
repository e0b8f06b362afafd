"""Stochastic model-based evaluation of power distribution grids."""

from gridsan._jit import JIT_ENABLED

__version__ = "0.1.0"

__all__ = ["JIT_ENABLED", "__version__"]
