"""Experiments module.

Training driver (gsl / plain / biased_baseline), evaluation, ablation
sweeps, run manifests and the SQLite run registry.
"""

from .handlers import setup

__all__ = ['setup']
