"""Synthetic human image/annotation generation pipeline and evaluation metrics."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
