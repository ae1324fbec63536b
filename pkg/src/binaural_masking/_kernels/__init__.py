"""Kernel selection: compiled beam scorer when available, NumPy otherwise."""

try:
    from ._beam import score_candidates

    BACKEND = "cython"
except ImportError:  # extension not built on this install
    from .pure import score_candidates

    BACKEND = "numpy"

from .pure import score_candidates as score_candidates_pure

__all__ = ["score_candidates", "score_candidates_pure", "BACKEND"]
