"""Attention-MLP, LDA and RBF-SVM malware classification pipeline."""
from ._accel import backend

__version__ = "0.1.0"

__all__ = ["backend", "__version__"]
