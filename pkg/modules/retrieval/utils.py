"""CSV export of rankings and evaluation reports."""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

from core.exceptions import FormatError
from modules.datasets.utils import format_float
from .models import EvalReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAP_COLUMNS = ("method", "map", "num_queries", "retrieval_cutoff")
CURVE_COLUMNS = ("method", "k", "precision")
RECALL_COLUMNS = ("k", "recall")
RANKING_COLUMNS = ("query_id", "rank", "id", "distance")


def _open_writer(path: PathLike, header: Sequence[str]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    f = open(path, "w", newline="", encoding="utf-8")
    writer = csv.writer(f)
    writer.writerow(header)
    return f, writer


def _read_rows(path: PathLike, header: Sequence[str]) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise FormatError(f"{path}: expected columns {list(header)}, got {reader.fieldnames}", offset=1)
        return list(reader)


def write_rankings(path: PathLike, rankings: Sequence[Sequence[Tuple[int, float]]]) -> Path:
    """One row per (query, rank): query_id, rank (1-based), id, distance."""
    f, writer = _open_writer(path, RANKING_COLUMNS)
    with f:
        for query_id, ranking in enumerate(rankings):
            for rank, (idx, dist) in enumerate(ranking, start=1):
                writer.writerow([query_id, rank, idx, format_float(dist)])
    return Path(path)


def write_map_table(path: PathLike, reports: Sequence[EvalReport]) -> Path:
    f, writer = _open_writer(path, MAP_COLUMNS)
    with f:
        for r in reports:
            writer.writerow([r.method, format_float(r.map), r.num_queries, r.retrieval_cutoff])
    logger.info(f"MAP table written to {path}")
    return Path(path)


def write_precision_curve(path: PathLike, reports: Sequence[EvalReport]) -> Path:
    """(method, k, precision) rows for external plotting."""
    f, writer = _open_writer(path, CURVE_COLUMNS)
    with f:
        for r in reports:
            for k, p in r.precision_at_k:
                writer.writerow([r.method, k, format_float(p)])
    return Path(path)


def write_recall(path: PathLike, recall: Sequence[Tuple[int, float]]) -> Path:
    f, writer = _open_writer(path, RECALL_COLUMNS)
    with f:
        for k, value in recall:
            writer.writerow([k, format_float(value)])
    return Path(path)


def read_reports(map_path: PathLike, curve_path: PathLike) -> List[EvalReport]:
    """Parse the MAP table and precision curve back into reports.

    Raises:
        FormatError: If a header or value is malformed
    """
    curves: Dict[str, List[Tuple[int, float]]] = {}
    try:
        for row in _read_rows(curve_path, CURVE_COLUMNS):
            curves.setdefault(row["method"], []).append((int(row["k"]), float(row["precision"])))
        return [
            EvalReport(
                map=float(row["map"]),
                precision_at_k=curves.get(row["method"], []),
                num_queries=int(row["num_queries"]),
                retrieval_cutoff=int(row["retrieval_cutoff"]),
                method=row["method"],
            )
            for row in _read_rows(map_path, MAP_COLUMNS)
        ]
    except ValueError as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"Malformed report value: {e}") from e
