"""Frequency-domain mixture-of-experts forecaster for gridded fields."""

__version__ = "0.1.0"

from .grid import GridField, HistoryWindow, NormStats, compute_norm_stats, denormalize, normalize
from .spectral import (
    SpectralField,
    dft2,
    dft2_bruteforce,
    hermitian_symmetrize,
    idft2,
    truncate_modes,
)

__all__ = [
    "GridField",
    "HistoryWindow",
    "NormStats",
    "SpectralField",
    "compute_norm_stats",
    "normalize",
    "denormalize",
    "dft2",
    "dft2_bruteforce",
    "idft2",
    "truncate_modes",
    "hermitian_symmetrize",
    "__version__",
]
