"""Utility functions for snapping logs and alignment summaries."""

import csv
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from modules.datasets.utils import format_float
from .models import SnapReport

logger = logging.getLogger(__name__)

SNAP_LOG_COLUMNS = ("iteration", "sample_id", "chosen_code", "lambda1", "lambda2", "alignment", "rejected")
HISTOGRAM_COLUMNS = ("source", "bin_left", "bin_right", "count")


class SnapLogWriter:
    """Append per-sample snapping decisions to a CSV file.

    Usage:
        with SnapLogWriter(path) as log:
            log.write(iteration, reports)
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._file = None
        self._writer = None
        self.rows = 0

    def __enter__(self) -> "SnapLogWriter":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file)
        self._writer.writerow(SNAP_LOG_COLUMNS)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
        logger.debug(f"Snap log {self.path}: {self.rows} rows")

    def write(self, iteration: int, reports: Sequence[SnapReport], sample_ids: Optional[Sequence[int]] = None) -> None:
        if self._writer is None:
            raise RuntimeError("SnapLogWriter used outside its context")
        ids = sample_ids if sample_ids is not None else range(len(reports))
        for sample_id, report in zip(ids, reports):
            self._writer.writerow([
                iteration,
                int(sample_id),
                "" if report.chosen_code is None else str(report.chosen_code),
                format_float(report.lambda1),
                format_float(report.lambda2),
                format_float(report.alignment),
                int(report.rejected),
            ])
            self.rows += 1


def rejection_rate(reports: Sequence[SnapReport]) -> float:
    """Fraction of rejected snaps (0.0 for an empty batch)."""
    if not reports:
        return 0.0
    return sum(1 for r in reports if r.rejected) / len(reports)


def mean_alignment(reports: Sequence[SnapReport]) -> float:
    if not reports:
        return 0.0
    return float(np.mean([r.alignment for r in reports]))


def alignment_histogram(values: Iterable[float], bins: int = 20) -> List[Tuple[float, float, int]]:
    """Histogram of alignments over the fixed range [-1, 1].

    Returns:
        (bin_left, bin_right, count) rows
    """
    counts, edges = np.histogram(np.asarray(list(values), dtype=np.float64), bins=bins, range=(-1.0, 1.0))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def write_alignment_histograms(
    path: Union[str, Path],
    histograms: Sequence[Tuple[str, Sequence[Tuple[float, float, int]]]],
) -> Path:
    """Write several labelled histograms into one CSV (source, bin_left, bin_right, count)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTOGRAM_COLUMNS)
        for source, rows in histograms:
            for left, right, count in rows:
                writer.writerow([source, format_float(left), format_float(right), count])
    logger.info(f"Alignment histograms written to {path}")
    return path
