"""Binaural speech enhancement with intelligibility-optimal masks.

Per-ear binary target masks maximize a weighted STOI objective; a
feed-forward estimator predicts continuous masks from noisy features; the
better-ear fusion of the two masks drives an OM-LSA gain applied
identically to both channels, preserving interaural cues.
"""

from ._kernels import BACKEND as kernel_backend
from .audio_io import BinauralSignal, Signal, read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "Signal",
    "BinauralSignal",
    "read_wav",
    "write_wav",
    "kernel_backend",
    "__version__",
]
