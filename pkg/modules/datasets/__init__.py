"""Datasets module.

Labeled feature vectors: fvecs/ivecs and CSV containers, the query/train
split protocol, and a synthetic Gaussian-cluster generator.
"""

from .handlers import setup

__all__ = ['setup']
