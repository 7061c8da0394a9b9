"""ADC search over an encoded database, exhaustive l2 search and evaluation.

Rankings are ascending in distance with ties broken by ascending id. Average
precision divides by the number of relevant items retrieved within the
cutoff; queries without any relevant database item are left out of the mean.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import DimensionMismatchError, InsufficientDataError, LabelMismatchError
from modules.vq.models import Codebook
from modules.vq.service import adc_distances, build_distance_table, encode_batch, squared_distances
from .models import EvalReport, SearchIndex

logger = logging.getLogger(__name__)

Ranking = List[Tuple[int, float]]


# ==================== SEARCH ====================

def build_index(cb: Codebook, vectors, labels=None) -> SearchIndex:
    """Encode a database.

    Raises:
        DimensionMismatchError: If vector dims do not match the codebook
        LabelMismatchError: If labels do not align with vectors
    """
    x = np.asarray(vectors, dtype=np.float32)
    codes = encode_batch(cb, x) if x.size else np.empty((0, cb.M), dtype=np.int64)
    index = SearchIndex(cb=cb, codes=codes, labels=labels)
    logger.info(f"Built index of {len(index)} codes with codebook version {cb.version}")
    return index


def _top(distances: np.ndarray, limit: int) -> np.ndarray:
    # stable sort: equal distances keep ascending id order
    return np.argsort(distances, kind="stable")[:limit]


def search(index: SearchIndex, query, limit: int) -> Ranking:
    """Top ``limit`` ids by ADC distance, as (id, approximate squared distance).

    Raises:
        InsufficientDataError: If the index is empty
        ValueError: If limit < 1
    """
    if limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    if len(index) == 0:
        raise InsufficientDataError("Cannot search an empty index")
    distances = adc_distances(build_distance_table(index.cb, query), index.codes)
    ids = _top(distances, limit)
    return [(int(i), float(distances[i])) for i in ids]


def exhaustive_l2_search(vectors, query, limit: int) -> Ranking:
    """Exact squared-Euclidean ranking over uncompressed vectors.

    Raises:
        InsufficientDataError: If the database is empty
        DimensionMismatchError: If the query dim differs
        ValueError: If limit < 1
    """
    if limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    db = np.asarray(vectors, dtype=np.float32)
    if db.size == 0:
        raise InsufficientDataError("Cannot search an empty database")
    db = db.reshape(db.shape[0], -1)
    q = np.asarray(query, dtype=np.float32).reshape(1, -1)
    if q.shape[1] != db.shape[1]:
        raise DimensionMismatchError(f"Query dim {q.shape[1]} != database dim {db.shape[1]}")
    distances = squared_distances(db, q)[:, 0]
    ids = _top(distances, limit)
    return [(int(i), float(distances[i])) for i in ids]


def rank_adc(index: SearchIndex, queries, cutoff: int = 0) -> np.ndarray:
    """Id rankings (Q, L) of many queries; L = cutoff or the index size."""
    if len(index) == 0:
        raise InsufficientDataError("Cannot search an empty index")
    limit = cutoff if cutoff > 0 else len(index)
    q = np.asarray(queries, dtype=np.float32).reshape(-1, index.cb.dim)
    return np.stack([
        _top(adc_distances(build_distance_table(index.cb, row), index.codes), limit) for row in q
    ]) if q.shape[0] else np.empty((0, min(limit, len(index))), dtype=np.int64)


def rank_l2(vectors, queries, cutoff: int = 0) -> np.ndarray:
    """Exact id rankings (Q, L) of many queries."""
    db = np.asarray(vectors, dtype=np.float32)
    if db.size == 0:
        raise InsufficientDataError("Cannot search an empty database")
    limit = cutoff if cutoff > 0 else db.shape[0]
    q = np.asarray(queries, dtype=np.float32).reshape(-1, db.shape[1])
    distances = squared_distances(db, q).T
    return np.argsort(distances, axis=1, kind="stable")[:, :limit]


# ==================== METRICS ====================

def _relevance(ids: np.ndarray, query_label, db_labels: np.ndarray, multi_label: bool) -> np.ndarray:
    if multi_label:
        return (db_labels[ids] & np.asarray(query_label)).any(axis=1)
    return db_labels[ids] == query_label


def _has_relevant(query_label, db_labels: np.ndarray, multi_label: bool) -> bool:
    if multi_label:
        return bool((db_labels & np.asarray(query_label)).any())
    return bool(np.any(db_labels == query_label))


def average_precision(relevant: Sequence[bool]) -> float:
    """AP of one ranking: mean precision at each relevant position (0 with no hit)."""
    rel = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    precisions = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precisions.mean())


def mean_average_precision(
    rankings: Sequence[Sequence[int]],
    query_labels,
    db_labels,
    cutoff: int = 0,
    multi_label: bool = False,
    ks: Sequence[int] = (),
    method: str = "adc",
) -> EvalReport:
    """MAP (and precision@k) of id rankings.

    Args:
        rankings: One id sequence per query, best first
        query_labels: Label (or 0/1 label row) per query
        db_labels: Label (or 0/1 label row) per database id
        cutoff: Rankings are truncated to this length; 0 keeps them whole
        multi_label: Relevant means sharing at least one label
        ks: Precision@k cut points; values above the ranking length are dropped

    Raises:
        LabelMismatchError: If rankings and query labels differ in length or
            an id has no database label
    """
    db = np.asarray(db_labels, dtype=np.int64)
    ql = np.asarray(query_labels, dtype=np.int64)
    if len(rankings) != ql.shape[0]:
        raise LabelMismatchError(f"{len(rankings)} rankings for {ql.shape[0]} query labels")

    aps: List[float] = []
    rel_rows: List[np.ndarray] = []
    length = 0
    for ranking, label in zip(rankings, ql):
        ids = np.asarray(ranking, dtype=np.int64)
        if cutoff > 0:
            ids = ids[:cutoff]
        if ids.size and (ids.min() < 0 or ids.max() >= db.shape[0]):
            raise LabelMismatchError(f"Ranking ids must lie in [0, {db.shape[0]})")
        if not _has_relevant(label, db, multi_label):
            continue
        rel = _relevance(ids, label, db, multi_label)
        aps.append(average_precision(rel))
        rel_rows.append(rel)
        length = max(length, ids.size)

    if not aps:
        logger.warning("No query has a relevant database item; MAP reported as 0")
    precision_at_k = [
        (int(k), float(np.mean([rel[:k].sum() / k for rel in rel_rows])) if rel_rows else 0.0)
        for k in ks if k <= length
    ]
    return EvalReport(
        map=float(np.mean(aps)) if aps else 0.0,
        precision_at_k=precision_at_k,
        num_queries=len(aps),
        retrieval_cutoff=cutoff,
        method=method,
    )


def recall_at_k(approx_rankings, exact_rankings, ks: Sequence[int]) -> List[Tuple[int, float]]:
    """Fraction of queries whose exact nearest neighbor is in the approximate top k."""
    approx = np.asarray(approx_rankings, dtype=np.int64)
    exact = np.asarray(exact_rankings, dtype=np.int64)
    if approx.shape[0] != exact.shape[0]:
        raise LabelMismatchError(f"{approx.shape[0]} approximate vs {exact.shape[0]} exact rankings")
    if approx.shape[0] == 0:
        return [(int(k), 0.0) for k in ks]
    nearest = exact[:, 0][:, None]
    return [
        (int(k), float((approx[:, :k] == nearest).any(axis=1).mean()))
        for k in ks if k <= approx.shape[1]
    ]


def evaluate_embeddings(
    cb: Codebook,
    database,
    db_labels,
    queries,
    query_labels,
    cutoff: int = 0,
    ks: Sequence[int] = (),
    multi_label: bool = False,
    recall_ks: Optional[Sequence[int]] = None,
) -> Tuple[EvalReport, EvalReport, List[Tuple[int, float]]]:
    """ADC and exhaustive-l2 reports for one embedded query/database split.

    Returns:
        (adc report, l2 report, recall@k of ADC against l2)
    """
    index = build_index(cb, database, db_labels)
    adc = rank_adc(index, queries, cutoff)
    exact = rank_l2(database, queries, cutoff)
    adc_report = mean_average_precision(adc, query_labels, db_labels, cutoff, multi_label, ks, "adc")
    l2_report = mean_average_precision(exact, query_labels, db_labels, cutoff, multi_label, ks, "l2")
    recall = recall_at_k(adc, exact, recall_ks if recall_ks is not None else ks)

    logger.info(f"MAP adc={adc_report.map:.4f} l2={l2_report.map:.4f} over {adc_report.num_queries} queries")
    if l2_report.map < adc_report.map:
        logger.warning(f"Exhaustive l2 MAP {l2_report.map:.4f} is below ADC MAP {adc_report.map:.4f}")
    return adc_report, l2_report, recall
