"""Data types for the product-quantization module."""

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import InvalidCodeError, NonFiniteError


@dataclass(frozen=True, eq=False)
class Codebook:
    """M sub-codebooks of K codewords each, immutable once built.

    Updates produce a new snapshot with ``version + 1``.

    Attributes:
        codewords: float32 array of shape (M, K, sub_dim)
        version: Update counter, increases on every committed update
        counts: int64 array (M, K) of lifetime assignment counts, used as
            the 1/n step of sequential k-means
    """

    codewords: np.ndarray
    version: int = 0
    counts: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        codewords = np.array(self.codewords, dtype=np.float32, copy=True)
        if codewords.ndim != 3 or min(codewords.shape) < 1:
            raise ValueError(f"codewords must have shape (M, K, sub_dim), got {codewords.shape}")
        if not np.all(np.isfinite(codewords)):
            raise NonFiniteError("Codebook contains non-finite codewords")
        codewords.setflags(write=False)
        object.__setattr__(self, "codewords", codewords)

        counts = self.counts
        if counts is None:
            counts = np.zeros(codewords.shape[:2], dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.shape != codewords.shape[:2]:
            raise ValueError(f"counts must have shape {codewords.shape[:2]}, got {counts.shape}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def M(self) -> int:
        return self.codewords.shape[0]

    @property
    def K(self) -> int:
        return self.codewords.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.codewords.shape[2]

    @property
    def dim(self) -> int:
        return self.M * self.sub_dim

    @property
    def code_bits(self) -> int:
        return self.M * max(1, (self.K - 1).bit_length())

    def successor(self, codewords: np.ndarray, counts: Optional[np.ndarray] = None) -> "Codebook":
        """Snapshot carrying new codewords and the next version number."""
        return Codebook(
            codewords=codewords,
            version=self.version + 1,
            counts=self.counts if counts is None else counts,
        )

    def __repr__(self) -> str:
        return f"<Codebook(M={self.M}, K={self.K}, sub_dim={self.sub_dim}, version={self.version})>"


@dataclass(frozen=True, order=True)
class PqCode:
    """Per-subspace codeword indices encoding one vector.

    Ordering is lexicographic on the indices.
    """

    indices: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, m: int) -> int:
        return self.indices[m]

    def validate_for(self, cb: Codebook) -> None:
        """Check the code against a codebook.

        Raises:
            InvalidCodeError: On wrong length or out-of-range index
        """
        if len(self.indices) != cb.M:
            raise InvalidCodeError(f"Code has {len(self.indices)} indices, codebook has M={cb.M}")
        for m, k in enumerate(self.indices):
            if not 0 <= k < cb.K:
                raise InvalidCodeError(f"Index {k} in subspace {m} outside [0, {cb.K})")

    def __str__(self) -> str:
        return "-".join(str(i) for i in self.indices)

    @classmethod
    def parse(cls, text: str) -> "PqCode":
        return cls(tuple(int(v) for v in text.split("-")))


@dataclass(frozen=True, eq=False)
class DistanceTable:
    """Squared distances from a query's sub-vectors to every codeword.

    Attributes:
        entries: float32 array (M, K); entries[m, k] = ||q_m - c_m(k)||^2
    """

    entries: np.ndarray

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    @property
    def K(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class QuantStats:
    """Mean squared quantization error over a dataset.

    ``mean_error`` equals the sum of ``per_subspace_error``.
    """

    mean_error: float
    per_subspace_error: Tuple[float, ...] = field(default_factory=tuple)

    @classmethod
    def from_subspaces(cls, per_subspace: Sequence[float]) -> "QuantStats":
        per = tuple(float(e) for e in per_subspace)
        return cls(mean_error=float(np.sum(np.asarray(per, dtype=np.float64))), per_subspace_error=per)


class Neighbor(NamedTuple):
    """One enumerated full codeword and its squared distance to the query."""

    code: PqCode
    distance: float
