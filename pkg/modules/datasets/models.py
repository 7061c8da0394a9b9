"""Data types for labeled vector datasets."""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from core.exceptions import DimensionMismatchError, LabelMismatchError


class Split(str, Enum):
    """Role of a row in the retrieval protocol."""

    TRAIN = "train"
    QUERY = "query"
    DATABASE = "database"


@dataclass(eq=False)
class LabeledDataset:
    """Feature vectors with one label (or one 0/1 label row) each.

    Attributes:
        vectors: float32 (N, d_in)
        labels: int64 (N,) class labels, or (N, L) 0/1 matrix when multi-label
        splits: Optional per-row tags; a row tagged ``train`` is also part of
            the database unless the database is built without training rows
    """

    vectors: np.ndarray
    labels: np.ndarray
    splits: Optional[np.ndarray] = None
    source: str = field(default="memory")

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim == 1:
            self.vectors = self.vectors.reshape(-1, 1) if self.vectors.size else self.vectors.reshape(0, 0)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise DimensionMismatchError(f"Vectors must be a 2-d matrix, got shape {self.vectors.shape}")
        if self.labels.shape[0] != self.vectors.shape[0]:
            raise LabelMismatchError(
                f"{self.labels.shape[0]} labels for {self.vectors.shape[0]} vectors"
            )
        if self.splits is not None:
            self.splits = np.asarray(self.splits, dtype=object)
            if self.splits.shape[0] != self.vectors.shape[0]:
                raise LabelMismatchError(f"{self.splits.shape[0]} split tags for {self.vectors.shape[0]} vectors")
            unknown = set(self.splits.tolist()) - {s.value for s in Split}
            if unknown:
                raise ValueError(f"Unknown split tags: {sorted(unknown)}")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def multi_label(self) -> bool:
        return self.labels.ndim == 2

    @property
    def classes(self) -> np.ndarray:
        """Sorted distinct class labels (single-label datasets)."""
        return np.unique(self.labels)

    def rows(self, split: Split) -> np.ndarray:
        """Indices of rows carrying the given tag, ascending."""
        if self.splits is None:
            raise ValueError("Dataset has no split tags; run split_protocol first")
        return np.flatnonzero(self.splits == Split(split).value)

    def database_rows(self, include_train: bool = True) -> np.ndarray:
        """Indices of the retrieval database: every non-query row, or only
        ``database`` rows when training rows are excluded."""
        if include_train:
            return np.flatnonzero(self.splits != Split.QUERY.value) if self.splits is not None else np.arange(len(self))
        return self.rows(Split.DATABASE)

    def take(self, indices) -> "LabeledDataset":
        """Sub-dataset of the given rows (tags carried along)."""
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            vectors=self.vectors[idx],
            labels=self.labels[idx],
            splits=None if self.splits is None else self.splits[idx],
        )

    def __repr__(self) -> str:
        return f"<LabeledDataset(n={len(self)}, dim={self.dim if self.vectors.size else 0}, source={self.source})>"


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic Gaussian clusters, one per class.

    Attributes:
        num_classes: Number of classes (>= 1)
        per_class: Points per class (>= 1)
        dim: Input dimension (>= 1)
        cluster_std: Standard deviation around each center (>= 0)
        center_scale: Standard deviation of the random class centers (> 0)
        seed: Generator seed
    """

    num_classes: int = 10
    per_class: int = 600
    dim: int = 32
    cluster_std: float = 1.0
    center_scale: float = 1.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 1 or self.per_class < 1 or self.dim < 1:
            raise ValueError("num_classes, per_class and dim must be >= 1")
        if self.cluster_std < 0:
            raise ValueError(f"cluster_std must be >= 0, got {self.cluster_std}")
        if self.center_scale <= 0:
            raise ValueError(f"center_scale must be > 0, got {self.center_scale}")
