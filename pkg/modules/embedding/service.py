"""Dense embedding network with explicit forward/backward passes.

Triplet loss uses non-squared Euclidean distances; the batch loss is the
mean over triples. Parameters are float64 so analytic gradients can be
checked tightly against finite differences.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import (
    DegenerateLabelError,
    DimensionMismatchError,
    LabelMismatchError,
    NonFiniteError,
)
from .models import DenseLayer, EmbeddingNet, GradientBundle, TripletBatch

logger = logging.getLogger(__name__)

TRIPLET_STRATEGIES = ("semi_hard", "random")

# (layer input, pre-activation) per layer
ForwardCache = List[Tuple[np.ndarray, np.ndarray]]


# ==================== NETWORK ====================

def init_network(
    in_dim: int,
    hidden_dims: Sequence[int],
    out_dim: int,
    seed: int = 0,
) -> EmbeddingNet:
    """Build input -> hidden (relu)... -> out_dim (identity) with He init.

    Args:
        in_dim: Input dimension
        hidden_dims: Widths of the relu hidden layers
        out_dim: Representation dimension d
        seed: Seed for the weight initialization
    """
    rng = np.random.default_rng(seed)
    dims = [in_dim, *hidden_dims, out_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        scale = np.sqrt((1.0 if last else 2.0) / fan_in)
        layers.append(DenseLayer(
            weight=rng.normal(0.0, scale, size=(fan_in, fan_out)),
            bias=np.zeros(fan_out),
            activation="identity" if last else "relu",
        ))
    net = EmbeddingNet(layers)
    logger.info(f"Initialized network {net.describe()} with seed {seed}")
    return net


def _check_inputs(net: EmbeddingNet, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise DimensionMismatchError(f"Input shape {x.shape} does not match in_dim={net.in_dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("Network input contains NaN or Inf")
    return x


def forward_cached(net: EmbeddingNet, inputs) -> Tuple[np.ndarray, ForwardCache]:
    """Forward pass keeping what backward() needs."""
    a = _check_inputs(net, inputs)
    cache: ForwardCache = []
    for layer in net.layers:
        z = a @ layer.weight + layer.bias
        cache.append((a, z))
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a, cache


def forward(net: EmbeddingNet, inputs) -> np.ndarray:
    """Representations for a batch of inputs.

    Raises:
        DimensionMismatchError: If the input width is not in_dim
        NonFiniteError: If the input contains NaN or Inf
    """
    return forward_cached(net, inputs)[0]


def backward(
    net: EmbeddingNet,
    cache: ForwardCache,
    output_gradients: np.ndarray,
) -> Tuple[List[np.ndarray], np.ndarray]:
    """Backpropagate dE/dy through the dense stack.

    Returns:
        (parameter gradients in net.parameters() order, dE/dinput)
    """
    grad = np.asarray(output_gradients, dtype=np.float64)
    param_grads: List[np.ndarray] = []
    for layer, (a_in, z) in zip(reversed(net.layers), reversed(cache)):
        if layer.activation == "relu":
            grad = grad * (z > 0.0)
        param_grads.append(grad.sum(axis=0))
        param_grads.append(a_in.T @ grad)
        grad = grad @ layer.weight.T
    param_grads.reverse()
    return param_grads, grad


# ==================== TRIPLET LOSS ====================

def _unit_or_zero(v: np.ndarray) -> Tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v), 0.0
    return v / norm, norm


def triplet_loss(
    y_a: np.ndarray,
    y_p: np.ndarray,
    y_n: np.ndarray,
    margin: float = 1.0,
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Hinge max{0, g + ||a - p|| - ||a - n||} and its subgradients.

    At the hinge corner and wherever a distance is zero the zero subgradient
    is used.

    Returns:
        (loss, dE/da, dE/dp, dE/dn)
    """
    a = np.asarray(y_a, dtype=np.float64)
    p = np.asarray(y_p, dtype=np.float64)
    n = np.asarray(y_n, dtype=np.float64)
    if not (a.shape == p.shape == n.shape):
        raise DimensionMismatchError(f"Triplet shapes differ: {a.shape}, {p.shape}, {n.shape}")
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")

    u_ap, d_ap = _unit_or_zero(a - p)
    u_an, d_an = _unit_or_zero(a - n)
    loss = margin + d_ap - d_an
    if loss <= 0.0:
        zero = np.zeros_like(a)
        return 0.0, zero, zero.copy(), zero.copy()
    return float(loss), u_ap - u_an, -u_ap, u_an


def triplet_batch_gradients(representations: np.ndarray, batch: TripletBatch) -> GradientBundle:
    """Mean triplet loss over a batch and dE/dy for every row."""
    y = np.asarray(representations, dtype=np.float64)
    grads = np.zeros_like(y)
    losses: List[float] = []
    n_triples = max(len(batch), 1)
    for a, p, n in batch.triples:
        loss, g_a, g_p, g_n = triplet_loss(y[a], y[p], y[n], batch.margin)
        losses.append(loss)
        if loss > 0.0:
            grads[a] += g_a / n_triples
            grads[p] += g_p / n_triples
            grads[n] += g_n / n_triples
    mean_loss = float(np.mean(losses)) if losses else 0.0
    return GradientBundle(
        gradients=grads,
        loss=mean_loss,
        active=int(sum(1 for v in losses if v > 0.0)),
        per_triplet_loss=losses,
    )


def batch_loss(net: EmbeddingNet, inputs, batch: TripletBatch) -> float:
    """Mean triplet loss of the network on a batch."""
    return triplet_batch_gradients(forward(net, inputs), batch).loss


# ==================== TRIPLET SELECTION ====================

def pairwise_distances(y: np.ndarray) -> np.ndarray:
    """Non-squared Euclidean distance matrix."""
    y = np.asarray(y, dtype=np.float64)
    diff = y[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def select_triplets(
    representations: np.ndarray,
    labels: Sequence[int],
    per_anchor: int = 3,
    strategy: str = "semi_hard",
    seed: int = 0,
    margin: float = 1.0,
) -> TripletBatch:
    """Build triples from a labelled batch.

    For every anchor, up to ``per_anchor`` positives are drawn without
    replacement. ``semi_hard`` takes a random negative whose distance lies in
    (d_ap, d_ap + margin], falling back to the hardest (closest) negative;
    ``random`` draws a negative uniformly.

    Raises:
        DegenerateLabelError: If fewer than 2 labels or a singleton class exist
        LabelMismatchError: If labels and representations disagree in length
        ValueError: On unknown strategy or per_anchor < 1
    """
    if strategy not in TRIPLET_STRATEGIES:
        raise ValueError(f"Unknown triplet strategy {strategy!r}, expected one of {TRIPLET_STRATEGIES}")
    if per_anchor < 1:
        raise ValueError(f"per_anchor must be >= 1, got {per_anchor}")

    y = np.asarray(representations, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape[0] != y.shape[0]:
        raise LabelMismatchError(f"{labels.shape[0]} labels for {y.shape[0]} representations")

    classes, class_sizes = np.unique(labels, return_counts=True)
    if classes.shape[0] < 2:
        raise DegenerateLabelError("Triplet selection needs at least two labels")
    if np.any(class_sizes < 2):
        lonely = classes[class_sizes < 2].tolist()
        raise DegenerateLabelError(f"Classes with a single sample cannot form positives: {lonely}")

    rng = np.random.default_rng(seed)
    dist = pairwise_distances(y)
    triples: List[Tuple[int, int, int]] = []

    for anchor in range(y.shape[0]):
        same = labels == labels[anchor]
        positives = np.flatnonzero(same)
        positives = positives[positives != anchor]
        negatives = np.flatnonzero(~same)

        chosen = rng.choice(positives, size=min(per_anchor, positives.shape[0]), replace=False)
        for positive in np.sort(chosen):
            if strategy == "random":
                negative = int(rng.choice(negatives))
            else:
                d_ap = dist[anchor, positive]
                d_an = dist[anchor, negatives]
                window = negatives[(d_an > d_ap) & (d_an <= d_ap + margin)]
                if window.shape[0] > 0:
                    negative = int(rng.choice(window))
                else:
                    negative = int(negatives[np.argmin(d_an)])
            triples.append((anchor, int(positive), negative))

    return TripletBatch(triples=np.array(triples, dtype=np.int64), margin=margin)


# ==================== OPTIMIZATION ====================

@dataclass
class SgdMomentum:
    """SGD with classical momentum; keeps one velocity per parameter array."""

    weight_decay: float = 0.0
    velocities: List[np.ndarray] = field(default_factory=list)

    def step(
        self,
        params: List[np.ndarray],
        grads: List[np.ndarray],
        lr: float,
        momentum: float,
    ) -> None:
        """Update ``params`` in place: v = mu*v - lr*g; p += v.

        Nothing is written unless every new parameter is finite.

        Raises:
            NonFiniteError: If the update would make a parameter non-finite
        """
        velocities = self.velocities or [np.zeros_like(p) for p in params]
        new_velocities, new_params = [], []
        for i, (p, g, v) in enumerate(zip(params, grads, velocities)):
            if self.weight_decay and i % 2 == 0:
                g = g + self.weight_decay * p
            nv = momentum * v - lr * g
            new_velocities.append(nv)
            new_params.append(p + nv)

        if not all(np.all(np.isfinite(p)) for p in new_params):
            raise NonFiniteError("Parameters would become non-finite after the update")

        for p, value in zip(params, new_params):
            p[...] = value
        self.velocities = new_velocities


def backward_apply(
    net: EmbeddingNet,
    inputs,
    representation_gradients,
    lr: float,
    momentum: float = 0.9,
    optimizer: Optional[SgdMomentum] = None,
) -> EmbeddingNet:
    """Backpropagate representation gradients and take one momentum-SGD step.

    The network is updated in place and returned. A fresh optimizer (zero
    velocity) is used when none is passed.

    Raises:
        NonFiniteError: If the gradients (or resulting parameters) are not finite
        DimensionMismatchError: If gradient and output shapes differ
        ValueError: If lr <= 0 or momentum outside [0, 1)
    """
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")

    grads_out = np.asarray(representation_gradients, dtype=np.float64)
    if not np.all(np.isfinite(grads_out)):
        raise NonFiniteError("Representation gradients contain NaN or Inf (training diverged?)")

    outputs, cache = forward_cached(net, inputs)
    if grads_out.shape != outputs.shape:
        raise DimensionMismatchError(
            f"Gradient shape {grads_out.shape} does not match output shape {outputs.shape}"
        )

    param_grads, _ = backward(net, cache, grads_out)
    if not all(np.all(np.isfinite(g)) for g in param_grads):
        raise NonFiniteError("Parameter gradients contain NaN or Inf")

    optimizer = optimizer or SgdMomentum()
    optimizer.step(net.parameters(), param_grads, lr, momentum)
    return net
