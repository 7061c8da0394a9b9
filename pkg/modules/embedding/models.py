"""Data types for the embedding network."""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from core.exceptions import DimensionMismatchError, NonFiniteError

ACTIVATIONS = ("relu", "identity")


@dataclass(eq=False)
class DenseLayer:
    """Fully-connected layer computing act(x @ weight + bias).

    Attributes:
        weight: float64 (in_dim, out_dim)
        bias: float64 (out_dim,)
        activation: "relu" or "identity"
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self) -> None:
        self.weight = np.array(self.weight, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[1]:
            raise DimensionMismatchError(
                f"Layer weight {self.weight.shape} and bias {self.bias.shape} do not chain"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass(eq=False)
class EmbeddingNet:
    """Stack of dense layers mapping inputs to d-dimensional representations."""

    layers: List[DenseLayer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("EmbeddingNet needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionMismatchError(
                    f"Layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise NonFiniteError("Network parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        params: List[np.ndarray] = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def clone(self) -> "EmbeddingNet":
        """Deep copy for evaluation snapshots."""
        return EmbeddingNet([layer.copy() for layer in self.layers])

    def describe(self) -> str:
        dims = [self.in_dim] + [layer.out_dim for layer in self.layers]
        acts = ",".join(layer.activation for layer in self.layers)
        return f"{'-'.join(str(d) for d in dims)} ({acts})"

    def __repr__(self) -> str:
        return f"<EmbeddingNet({self.describe()})>"


@dataclass(eq=False)
class TripletBatch:
    """Index triples (anchor, positive, negative) into a batch.

    Attributes:
        triples: int64 array (n, 3)
        margin: hinge gap g >= 0
    """

    triples: np.ndarray
    margin: float = 1.0

    def __post_init__(self) -> None:
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")

    def __len__(self) -> int:
        return self.triples.shape[0]

    def as_tuples(self) -> List[tuple]:
        return [tuple(int(v) for v in row) for row in self.triples]


@dataclass(eq=False)
class GradientBundle:
    """Per-sample representation gradients and the batch loss.

    Attributes:
        gradients: float64 (n, out_dim), dE/dy for every row of the batch
        loss: mean triplet loss over the batch's triples
        active: number of triples with positive hinge
    """

    gradients: np.ndarray
    loss: float
    active: int = 0
    per_triplet_loss: Sequence[float] = field(default_factory=list)
