"""Gradient snapping module.

Replaces raw similarity-loss gradients of the embedding by a combination of
their residual and their projection towards a neighboring PQ codeword, and
keeps the codebook fitted to the moving representations.
"""

from .models import GslConfig, SnapReport, SnapSelection
from .service import (
    baseline_alignment,
    baseline_biased_gradient,
    compute_sigma,
    gsl_backward,
    gsl_forward,
    refresh_codebook,
    select_codeword,
    snap_direction,
    snap_gradient,
)

__all__ = [
    'GslConfig',
    'SnapReport',
    'SnapSelection',
    'baseline_alignment',
    'baseline_biased_gradient',
    'compute_sigma',
    'gsl_backward',
    'gsl_forward',
    'refresh_codebook',
    'select_codeword',
    'snap_direction',
    'snap_gradient',
]
