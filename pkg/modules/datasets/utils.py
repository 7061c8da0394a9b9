"""Readers and writers for fvecs/ivecs and CSV vector files."""

import csv
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from core.exceptions import FormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def format_float(value: float) -> str:
    """Format a float for CSV output.

    ``repr`` round-trips exactly, so files parse back to identical values.
    """
    return repr(float(value))


# ==================== FVECS / IVECS ====================

def _read_vecs(path: PathLike, dtype: str) -> np.ndarray:
    """Parse records of (int32 dim, dim 4-byte values), little-endian."""
    raw = Path(path).read_bytes()
    if not raw:
        return np.empty((0, 0), dtype=dtype)
    if len(raw) < 4:
        raise FormatError("Truncated record header", offset=0)

    dim = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if dim <= 0:
        raise FormatError(f"Invalid record dimension {dim}", offset=0)

    record = 4 * (dim + 1)
    n_full = len(raw) // record
    words = np.frombuffer(raw, dtype="<i4", count=n_full * (dim + 1)).reshape(n_full, dim + 1)
    bad = np.flatnonzero(words[:, 0] != dim)
    if bad.size:
        row = int(bad[0])
        raise FormatError(
            f"Record {row} has dimension {int(words[row, 0])}, expected {dim}", offset=row * record
        )
    if n_full * record != len(raw):
        raise FormatError(f"Truncated record {n_full}", offset=n_full * record)

    payload = np.ascontiguousarray(words[:, 1:])
    return payload.view(dtype).astype(dtype[1:], copy=True)


def _write_vecs(path: PathLike, matrix: np.ndarray, dtype: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.asarray(matrix)
    if x.size == 0:
        path.write_bytes(b"")
        return path
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n, dim = x.shape
    out = np.empty((n, dim + 1), dtype="<i4")
    out[:, 0] = dim
    out[:, 1:] = x.astype(dtype).view("<i4")
    path.write_bytes(out.tobytes())
    return path


def load_fvecs(path: PathLike) -> np.ndarray:
    """Read an fvecs file into a float32 (N, d) matrix.

    An empty file gives an empty (0, 0) matrix.

    Raises:
        FormatError: On truncation or a record dimension that differs from
            the first one (``offset`` is the record's byte position)
    """
    vectors = _read_vecs(path, "<f4")
    logger.debug(f"Loaded {vectors.shape[0]} vectors from {path}")
    return vectors


def load_ivecs(path: PathLike) -> np.ndarray:
    """Read an ivecs file into an int32 (N, d) matrix."""
    return _read_vecs(path, "<i4")


def write_fvecs(path: PathLike, matrix) -> Path:
    return _write_vecs(path, matrix, "<f4")


def write_ivecs(path: PathLike, matrix) -> Path:
    return _write_vecs(path, matrix, "<i4")


def labels_from_matrix(matrix: np.ndarray) -> np.ndarray:
    """Single-column label matrices become a label vector; wider ones stay 0/1 rows."""
    m = np.asarray(matrix, dtype=np.int64)
    if m.ndim == 2 and m.shape[1] == 1:
        return m[:, 0]
    return m


# ==================== CSV ====================

def write_csv(path: PathLike, vectors, labels=None) -> Path:
    """Write vectors (columns f0..f{d-1}) and optional labels with a header row.

    Single labels go to a ``label`` column, label matrices to
    ``label0..label{L-1}``. Floats are written with ``repr`` so a re-read
    is exact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.asarray(vectors, dtype=np.float32)
    header = [f"f{j}" for j in range(x.shape[1])]
    lab = None if labels is None else np.asarray(labels, dtype=np.int64)
    if lab is not None:
        header += ["label"] if lab.ndim == 1 else [f"label{j}" for j in range(lab.shape[1])]

    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i, row in enumerate(x):
            values = [format_float(v) for v in row]
            if lab is not None:
                values += [str(int(v)) for v in np.atleast_1d(lab[i])]
            writer.writerow(values)
    return path


def load_csv(path: PathLike) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Read a CSV written by write_csv (or any file with the same header scheme).

    Returns:
        (float32 vectors, int64 labels or None)

    Raises:
        FormatError: On a missing header, ragged rows or unparsable values
            (``offset`` is the 1-based line number)
    """
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        return np.empty((0, 0), dtype=np.float32), None

    header = rows[0]
    feature_cols = [j for j, name in enumerate(header) if name.startswith("f")]
    label_cols = [j for j, name in enumerate(header) if name.startswith("label")]
    if not feature_cols:
        raise FormatError("CSV header has no feature columns (f0, f1, ...)", offset=1)

    vectors = np.empty((len(rows) - 1, len(feature_cols)), dtype=np.float32)
    labels = np.empty((len(rows) - 1, len(label_cols)), dtype=np.int64)
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"Row has {len(row)} fields, header has {len(header)}", offset=line)
        try:
            vectors[line - 2] = [float(row[j]) for j in feature_cols]
            labels[line - 2] = [int(row[j]) for j in label_cols]
        except ValueError as e:
            raise FormatError(f"Unparsable value: {e}", offset=line) from e

    if not label_cols:
        return vectors, None
    return vectors, labels_from_matrix(labels) if header[label_cols[0]] == "label" else labels


def load_labels(path: PathLike) -> np.ndarray:
    """Labels from an ivecs file or a single-column (or 0/1 matrix) CSV."""
    path = Path(path)
    if path.suffix == ".ivecs":
        return labels_from_matrix(load_ivecs(path))
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    try:
        values = np.array([[int(v) for v in row] for row in rows[1:] if row], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"Unparsable label in {path}: {e}") from e
    return labels_from_matrix(values.reshape(len(values), -1))


def load_vectors(path: PathLike) -> np.ndarray:
    """Vectors from an .fvecs or .csv file (labels, if any, are ignored).

    Raises:
        FormatError: On an unsupported extension or malformed content
    """
    path = Path(path)
    if path.suffix == ".fvecs":
        return load_fvecs(path)
    if path.suffix == ".csv":
        return load_csv(path)[0]
    raise FormatError(f"Unsupported vector file type: {path.suffix or path.name}")
