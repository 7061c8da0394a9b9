"""Data types for retrieval and evaluation."""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from core.exceptions import InvalidCodeError, LabelMismatchError
from modules.vq.models import Codebook, PqCode


@dataclass(eq=False)
class SearchIndex:
    """Encoded database pinned to one codebook snapshot.

    Attributes:
        cb: Codebook the codes were produced with
        codes: int64 (N, M)
        labels: (N,) class labels, (N, L) 0/1 rows, or None when unlabeled
    """

    cb: Codebook
    codes: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.codes = np.asarray(self.codes, dtype=np.int64).reshape(-1, self.cb.M)
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() >= self.cb.K):
            raise InvalidCodeError(f"Index codes must lie in [0, {self.cb.K})")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.size == 0:
                self.labels = None
            elif self.labels.shape[0] != self.codes.shape[0]:
                raise LabelMismatchError(f"{self.labels.shape[0]} labels for {self.codes.shape[0]} codes")

    def __len__(self) -> int:
        return self.codes.shape[0]

    def code(self, i: int) -> PqCode:
        return PqCode(tuple(int(k) for k in self.codes[i]))


@dataclass
class EvalReport:
    """Retrieval quality of one method on one query set.

    Attributes:
        map: Mean average precision in [0, 1]
        precision_at_k: (k, precision) pairs
        num_queries: Queries that entered the mean
        retrieval_cutoff: Ranking length used (0 = whole database)
        method: ``adc`` or ``l2``
    """

    map: float
    precision_at_k: List[Tuple[int, float]] = field(default_factory=list)
    num_queries: int = 0
    retrieval_cutoff: int = 0
    method: str = "adc"

    def __post_init__(self) -> None:
        if not 0.0 <= self.map <= 1.0:
            raise ValueError(f"MAP must lie in [0, 1], got {self.map}")
        if any(not 0.0 <= p <= 1.0 for _, p in self.precision_at_k):
            raise ValueError("precision values must lie in [0, 1]")

    def precision(self, k: int) -> float:
        for kk, p in self.precision_at_k:
            if kk == k:
                return p
        raise KeyError(k)
