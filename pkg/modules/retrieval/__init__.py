"""Retrieval module.

Exhaustive ADC search over PQ-encoded databases, exact l2 search, and MAP /
precision@k / recall@k evaluation.
"""

from .handlers import setup

__all__ = ['setup']
