"""Product quantization: codebook training, encoding, ADC and neighbor enumeration.

Vectors and tables are float32; distances are evaluated and errors
accumulated in float64. All distances are squared Euclidean.
"""

import heapq
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus

from core.exceptions import (
    DimensionMismatchError,
    InsufficientDataError,
    InvalidCodeError,
    NonFiniteError,
)
from .models import Codebook, DistanceTable, Neighbor, PqCode, QuantStats

logger = logging.getLogger(__name__)


IterationCallback = Callable[[int, QuantStats], None]


# ==================== HELPERS ====================

def _as_matrix(data, dim: Optional[int] = None) -> np.ndarray:
    x = np.asarray(data, dtype=np.float32)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise DimensionMismatchError(f"Expected a 2-d array of vectors, got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise DimensionMismatchError(f"Vectors have dimension {x.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("Input vectors contain NaN or Inf")
    return x


def _as_vector(y, dim: int) -> np.ndarray:
    v = np.asarray(y, dtype=np.float32).reshape(-1)
    if v.shape[0] != dim:
        raise DimensionMismatchError(f"Vector has dimension {v.shape[0]}, expected {dim}")
    return v


def squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact squared distances between rows of ``x`` and ``centroids``.

    Args:
        x: (n, s) points
        centroids: (K, s) centroids

    Returns:
        float64 array (n, K)
    """
    x64 = np.asarray(x, dtype=np.float64)
    c64 = np.asarray(centroids, dtype=np.float64)
    return cdist(x64, c64, "sqeuclidean")


def _split(x: np.ndarray, M: int) -> np.ndarray:
    """Reshape (n, d) into (n, M, d / M)."""
    n, d = x.shape
    return x.reshape(n, M, d // M)


def subspace_rng(seed: int, m: int) -> np.random.Generator:
    """Random generator used for subspace ``m`` of a codebook seeded with ``seed``."""
    return np.random.default_rng([seed, m])


# ==================== K-MEANS ====================

def seed_centroids(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding.

    Args:
        x: (n, s) float64 points, n >= K
        K: Number of centroids
        rng: Random generator; one draw from it seeds the selection

    Returns:
        (K, s) float64 initial centroids chosen among the points
    """
    centers, _ = kmeans_plusplus(
        np.asarray(x, dtype=np.float64), n_clusters=K,
        random_state=int(rng.integers(2 ** 31 - 1)),
    )
    return centers.astype(np.float64, copy=True)


def _update_centroids(
    x: np.ndarray,
    assign: np.ndarray,
    costs: np.ndarray,
    K: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Recompute means; an empty cluster takes the worst-served point.

    ``assign`` and ``costs`` are modified in place for moved points.
    """
    s = x.shape[1]
    sums = np.zeros((K, s), dtype=np.float64)
    np.add.at(sums, assign, x)
    sizes = np.bincount(assign, minlength=K).astype(np.int64)

    for k in np.flatnonzero(sizes == 0):
        movable = sizes[assign] > 1
        candidate_costs = np.where(movable, costs, -1.0)
        i = int(np.argmax(candidate_costs))
        old = assign[i]
        sums[old] -= x[i]
        sizes[old] -= 1
        sums[k] = x[i]
        sizes[k] = 1
        assign[i] = k
        costs[i] = 0.0
        logger.debug(f"Empty cluster {k} re-seeded with point {i}")

    return sums / sizes[:, None], sizes


def run_kmeans(
    x: np.ndarray,
    K: int,
    iters: int,
    rng: np.random.Generator,
    init: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Lloyd's k-means with k-means++ seeding.

    Args:
        x: (n, s) points
        K: Number of clusters
        iters: Number of update steps
        rng: Random generator used for seeding
        init: Optional explicit initial centroids (K, s)

    Returns:
        (centroids float64 (K, s), final assignment (n,), errors) where
        errors[t] is the mean squared error after t update steps; the
        sequence is non-increasing.
    """
    x = np.asarray(x, dtype=np.float64)
    centroids = seed_centroids(x, K, rng) if init is None else np.array(init, dtype=np.float64)
    rows = np.arange(x.shape[0])

    dists = squared_distances(x, centroids)
    assign = dists.argmin(axis=1)
    costs = dists[rows, assign]
    errors = [float(costs.mean())]

    for it in range(iters):
        centroids, _ = _update_centroids(x, assign, costs, K)
        dists = squared_distances(x, centroids)
        new_assign = dists.argmin(axis=1)
        costs = dists[rows, new_assign]
        errors.append(float(costs.mean()))
        converged = np.array_equal(new_assign, assign)
        assign = new_assign
        if converged:
            errors.extend([errors[-1]] * (iters - it - 1))
            break

    return centroids, assign, errors


def train_codebook(
    data,
    M: int,
    K: int,
    iters: int = 25,
    seed: int = 0,
    on_iteration: Optional[IterationCallback] = None,
) -> Codebook:
    """Train a PQ codebook with k-means on each of the M subspaces.

    Args:
        data: (N, d) training vectors
        M: Number of subspaces; must divide d
        K: Codewords per subspace
        iters: k-means update steps per subspace
        seed: Seed; subspace m uses ``subspace_rng(seed, m)``
        on_iteration: Called with (t, QuantStats) for t = 0..iters, where t = 0
            is the error right after seeding

    Returns:
        Codebook at version 0 with counts set to the final cluster sizes

    Raises:
        DimensionMismatchError: If d % M != 0
        InsufficientDataError: If N < K
        ValueError: If iters < 1 or M, K < 1
    """
    if M < 1 or K < 1:
        raise ValueError(f"M and K must be positive, got M={M}, K={K}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")

    x = _as_matrix(data)
    n, d = x.shape
    if d % M != 0:
        raise DimensionMismatchError(f"Dimension d={d} is not divisible by M={M}")
    if n < K:
        raise InsufficientDataError(f"Need at least K={K} vectors, got N={n}")

    logger.info(f"Training codebook: N={n}, d={d}, M={M}, K={K}, iters={iters}, seed={seed}")

    sub = _split(x, M)
    codewords = np.empty((M, K, d // M), dtype=np.float32)
    counts = np.empty((M, K), dtype=np.int64)
    traces = np.empty((M, iters + 1), dtype=np.float64)

    for m in range(M):
        centroids, assign, errors = run_kmeans(sub[:, m, :], K, iters, subspace_rng(seed, m))
        codewords[m] = centroids.astype(np.float32)
        counts[m] = np.bincount(assign, minlength=K)
        traces[m] = errors
        logger.debug(f"Subspace {m}: error {errors[0]:.6f} -> {errors[-1]:.6f}")

    if on_iteration is not None:
        for t in range(iters + 1):
            on_iteration(t, QuantStats.from_subspaces(traces[:, t]))

    logger.info(f"Codebook trained: final error {traces[:, -1].sum():.6f}")
    return Codebook(codewords=codewords, version=0, counts=counts)


# ==================== ENCODE / DECODE ====================

def encode_batch(cb: Codebook, data) -> np.ndarray:
    """Encode many vectors.

    Ties go to the smallest codeword index.

    Returns:
        int64 array (N, M)
    """
    x = _as_matrix(data, cb.dim)
    sub = _split(x, cb.M)
    codes = np.empty((x.shape[0], cb.M), dtype=np.int64)
    for m in range(cb.M):
        codes[:, m] = squared_distances(sub[:, m, :], cb.codewords[m]).argmin(axis=1)
    return codes


def encode(cb: Codebook, y) -> PqCode:
    """Encode one vector: per subspace, the index of the nearest codeword.

    Raises:
        DimensionMismatchError: If dim(y) != M * sub_dim
    """
    v = _as_vector(y, cb.dim)
    return PqCode(tuple(encode_batch(cb, v[None, :])[0]))


def decode_batch(cb: Codebook, codes) -> np.ndarray:
    """Reconstruct vectors from an (N, M) code array.

    Raises:
        InvalidCodeError: If an index is out of range or the width is not M
    """
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[1] != cb.M:
        raise InvalidCodeError(f"Codes must have shape (N, {cb.M}), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= cb.K):
        raise InvalidCodeError(f"Code indices must lie in [0, {cb.K})")
    parts = [cb.codewords[m][codes[:, m]] for m in range(cb.M)]
    return np.concatenate(parts, axis=1).astype(np.float32, copy=False)


def decode(cb: Codebook, code: PqCode) -> np.ndarray:
    """Concatenate the selected codeword of every subspace.

    Raises:
        InvalidCodeError: If the code does not fit the codebook
    """
    if not isinstance(code, PqCode):
        code = PqCode(tuple(code))
    code.validate_for(cb)
    return np.concatenate([cb.codewords[m][k] for m, k in enumerate(code)]).astype(np.float32)


def quantization_error(cb: Codebook, data) -> QuantStats:
    """Mean squared distance between vectors and their reconstructions.

    Raises:
        InsufficientDataError: If data is empty
        DimensionMismatchError: If dimensions disagree
    """
    x = np.asarray(data, dtype=np.float32)
    if x.size == 0:
        raise InsufficientDataError("Cannot compute quantization error of empty data")
    x = _as_matrix(x, cb.dim)
    residual = x.astype(np.float64) - decode_batch(cb, encode_batch(cb, x)).astype(np.float64)
    per = (_split(residual, cb.M) ** 2).sum(axis=2).mean(axis=0)
    return QuantStats.from_subspaces(per)


# ==================== ADC ====================

def build_distance_table(cb: Codebook, q) -> DistanceTable:
    """Squared distances from each query sub-vector to every codeword.

    Raises:
        DimensionMismatchError: If dim(q) != codebook dimension
    """
    v = _as_vector(q, cb.dim).astype(np.float64).reshape(cb.M, 1, cb.sub_dim)
    diff = cb.codewords.astype(np.float64) - v
    entries = np.einsum("mks,mks->mk", diff, diff).astype(np.float32)
    return DistanceTable(entries=entries)


def _lookup_sum(rows: Sequence[Sequence[float]], indices: Sequence[int]) -> float:
    # fixed left-to-right order keeps enumeration and ADC bit-identical
    total = 0.0
    for m, k in enumerate(indices):
        total += rows[m][k]
    return total


def adc_distance(table: DistanceTable, code: PqCode) -> float:
    """Approximate squared distance: sum of M table lookups.

    Raises:
        InvalidCodeError: If the code does not fit the table
    """
    if len(code) != table.M or any(not 0 <= k < table.K for k in code):
        raise InvalidCodeError(f"Code {code} does not fit a table of shape {table.entries.shape}")
    return _lookup_sum(table.entries.astype(np.float64).tolist(), tuple(code))


def adc_distances(table: DistanceTable, codes: np.ndarray) -> np.ndarray:
    """ADC distances for an (N, M) code array, float64, same summation order."""
    entries = table.entries.astype(np.float64)
    out = np.zeros(codes.shape[0], dtype=np.float64)
    for m in range(table.M):
        out += entries[m][codes[:, m]]
    return out


# ==================== NEIGHBOR ENUMERATION ====================

def enumerate_neighbor_codewords(cb: Codebook, y, T: int) -> List[Neighbor]:
    """The T full codewords nearest to ``y``, ascending.

    Best-first multi-sequence traversal: each subspace's codewords are
    sorted by distance (stable, so equal distances keep index order), and
    a heap of position tuples is expanded one coordinate at a time. Ties in
    total distance are broken by lexicographic code order. Distances agree
    bit-for-bit with ``adc_distance(build_distance_table(cb, y), code)``.

    Raises:
        ValueError: If T is outside [1, K^M]
        DimensionMismatchError: If dim(y) does not match
    """
    total = cb.K ** cb.M
    if not 1 <= T <= total:
        raise ValueError(f"T must lie in [1, {total}], got {T}")

    entries = build_distance_table(cb, y).entries.astype(np.float64)
    orders = [np.argsort(entries[m], kind="stable") for m in range(cb.M)]
    sorted_rows = [entries[m][orders[m]].tolist() for m in range(cb.M)]
    order_lists = [o.tolist() for o in orders]

    def state(pos: Tuple[int, ...]):
        code = tuple(order_lists[m][p] for m, p in enumerate(pos))
        return (_lookup_sum(sorted_rows, pos), code, pos)

    start = (0,) * cb.M
    heap = [state(start)]
    seen = {start}
    result: List[Neighbor] = []

    while len(result) < T:
        dist, code, pos = heapq.heappop(heap)
        result.append(Neighbor(PqCode(code), dist))
        for m in range(cb.M):
            if pos[m] + 1 < cb.K:
                nxt = pos[:m] + (pos[m] + 1,) + pos[m + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, state(nxt))

    return result


# ==================== STREAMING UPDATES ====================

def sequential_kmeans_update(cb: Codebook, stream) -> Codebook:
    """Stream vectors through per-subspace sequential k-means.

    Each streamed sub-vector moves its nearest codeword by 1/n_k of the
    residual, n_k being that codeword's lifetime assignment count after the
    increment. Points are processed in stream order.

    Returns:
        New Codebook with version + 1 and updated counts

    Raises:
        InsufficientDataError: If the stream is empty
        DimensionMismatchError: If dimensions disagree
    """
    x = np.asarray(stream, dtype=np.float32)
    if x.size == 0:
        raise InsufficientDataError("Cannot refresh a codebook from an empty stream")
    x = _split(_as_matrix(x, cb.dim), cb.M).astype(np.float64)

    centroids = cb.codewords.astype(np.float64)
    counts = cb.counts.copy()
    rows = np.arange(cb.M)

    for point in x:
        diff = centroids - point[:, None, :]
        nearest = np.einsum("mks,mks->mk", diff, diff).argmin(axis=1)
        counts[rows, nearest] += 1
        step = (point - centroids[rows, nearest]) / counts[rows, nearest][:, None]
        centroids[rows, nearest] += step

    return cb.successor(centroids.astype(np.float32), counts)
