"""Whole-slide colorectal polyp classification pipeline."""

from .core import ClassLabel, RandomStream, argmax_class, parse_label
from .kernels import BACKEND

__all__ = ["BACKEND", "ClassLabel", "RandomStream", "argmax_class", "parse_label"]
__version__ = "0.1.0"
