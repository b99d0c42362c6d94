"""Targeted adversarial attacks and transferability measurement for speech and classification models."""

from ._backend import BACKEND

__version__ = "0.1.0"


__all__ = ["BACKEND", "__version__"]
