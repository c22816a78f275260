"""Semi-supervised writer identification with weighted label smoothing."""

from widr.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
