"""Embedding network module.

Dense relu network trained with a triplet loss and momentum SGD.
"""

from .models import DenseLayer, EmbeddingNet, GradientBundle, TripletBatch
from .service import (
    SgdMomentum,
    backward,
    backward_apply,
    forward,
    init_network,
    select_triplets,
    triplet_batch_gradients,
    triplet_loss,
)
from .storage import load_checkpoint, save_checkpoint

__all__ = [
    'DenseLayer',
    'EmbeddingNet',
    'GradientBundle',
    'TripletBatch',
    'SgdMomentum',
    'backward',
    'backward_apply',
    'forward',
    'init_network',
    'select_triplets',
    'triplet_batch_gradients',
    'triplet_loss',
    'load_checkpoint',
    'save_checkpoint',
]
