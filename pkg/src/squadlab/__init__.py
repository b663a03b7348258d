"""Desk-scale extractive question answering toolkit."""

__version__ = "0.1.0"

from .autograd import Rng, Tensor  # noqa: F401
from .data import Feature, PreprocessConfig, RawExample  # noqa: F401
