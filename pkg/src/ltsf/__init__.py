"""Long-term time-series forecasting toolkit built around a solver-free linear latent ODE."""
from ._backend import NAME as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
