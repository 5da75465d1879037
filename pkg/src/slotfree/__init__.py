"""Sparse K-winner associative memories, their retention statistics, and
slot-free memory-augmented attention on an in-context case-lookup task."""

from .errors import (DivergenceError, InsufficientDataError, IntegrityError,
                     InvalidConfigError, UndefinedDPrimeError)
from .network import KWinnerConfig, KWinnerMHN, kwta

__version__ = "0.1.0"

__all__ = [
    "KWinnerConfig", "KWinnerMHN", "kwta",
    "DivergenceError", "InsufficientDataError", "IntegrityError",
    "InvalidConfigError", "UndefinedDPrimeError",
]
