"""Pseudo-spectral hypodissipative Navier-Stokes solver and harmonic-analysis diagnostics."""
from .spectral import TorusGrid

__version__ = "0.1.0"

__all__ = ["TorusGrid", "__version__"]
