"""Evaluator-guided generative auto-bidding on a budget-constrained second-price simulator."""

from .errors import DomainError, EpisodeAborted, NonFiniteError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "DomainError", "EpisodeAborted", "NonFiniteError", "__version__"]
