"""Codebook containers.

Binary ``SQCB`` layout (little-endian)::

    offset  size  field
    0       4     magic "SQCB"
    4       4     format version (u32, currently 1)
    8       4     M (u32)
    12      4     K (u32)
    16      4     sub_dim (u32)
    20      ...   M*K*sub_dim float32 codewords, row-major (m, k, component)

The JSON text dump carries the same codewords plus the snapshot version and
the per-codeword assignment counts.
"""

import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from core.exceptions import FormatError
from .models import Codebook

logger = logging.getLogger(__name__)

MAGIC = b"SQCB"
FORMAT_VERSION = 1

HEADER_DTYPE = np.dtype([
    ("magic", "S4"),
    ("format_version", "<u4"),
    ("M", "<u4"),
    ("K", "<u4"),
    ("sub_dim", "<u4"),
])


def codebook_to_bytes(cb: Codebook) -> bytes:
    """Serialize a codebook into the SQCB binary layout."""
    header = np.array([(MAGIC, FORMAT_VERSION, cb.M, cb.K, cb.sub_dim)], dtype=HEADER_DTYPE)
    return header.tobytes() + cb.codewords.astype("<f4").tobytes(order="C")


def codebook_from_bytes(payload: bytes, version: int = 0) -> Codebook:
    """Parse an SQCB payload.

    Raises:
        FormatError: On bad magic, unknown format version or wrong length
    """
    if len(payload) < HEADER_DTYPE.itemsize:
        raise FormatError("Truncated SQCB header", offset=len(payload))

    header = np.frombuffer(payload, dtype=HEADER_DTYPE, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise FormatError(f"Bad magic {bytes(header['magic'])!r}, expected {MAGIC!r}", offset=0)
    if int(header["format_version"]) != FORMAT_VERSION:
        raise FormatError(f"Unsupported SQCB format version {int(header['format_version'])}", offset=4)

    M, K, sub_dim = int(header["M"]), int(header["K"]), int(header["sub_dim"])
    expected = HEADER_DTYPE.itemsize + M * K * sub_dim * 4
    if len(payload) != expected:
        raise FormatError(
            f"SQCB payload has {len(payload)} bytes, header implies {expected}",
            offset=min(len(payload), expected),
        )

    codewords = np.frombuffer(payload, dtype="<f4", offset=HEADER_DTYPE.itemsize)
    return Codebook(codewords=codewords.reshape(M, K, sub_dim).astype(np.float32), version=version)


def save_codebook(cb: Codebook, path: Union[str, Path]) -> Path:
    """Write a codebook as SQCB binary."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(codebook_to_bytes(cb))
    logger.info(f"Saved codebook {cb!r} to {path}")
    return path


def load_codebook(path: Union[str, Path]) -> Codebook:
    """Read an SQCB file.

    If a text dump with the same stem sits beside it, the snapshot version
    and assignment counts are restored from it.

    Raises:
        FormatError: If the file is malformed
    """
    path = Path(path)
    cb = codebook_from_bytes(path.read_bytes())
    dump = path.with_suffix(".json")
    if dump.is_file():
        meta = json.loads(dump.read_text(encoding="utf-8"))
        cb = Codebook(
            codewords=cb.codewords,
            version=int(meta.get("version", 0)),
            counts=np.asarray(meta.get("counts", cb.counts), dtype=np.int64),
        )
    logger.info(f"Loaded codebook {cb!r} from {path}")
    return cb


def dump_codebook_text(cb: Codebook, path: Union[str, Path]) -> Path:
    """Write the human-readable JSON dump used for debugging."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": "SQCB",
        "format_version": FORMAT_VERSION,
        "version": cb.version,
        "M": cb.M,
        "K": cb.K,
        "sub_dim": cb.sub_dim,
        "codewords": cb.codewords.tolist(),
        "counts": cb.counts.tolist(),
    }
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return path


def load_codebook_text(path: Union[str, Path]) -> Codebook:
    """Read a JSON dump written by dump_codebook_text.

    Raises:
        FormatError: If required keys are missing or shapes disagree
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        codewords = np.asarray(doc["codewords"], dtype=np.float32)
        if codewords.shape != (doc["M"], doc["K"], doc["sub_dim"]):
            raise FormatError(f"Codeword array shape {codewords.shape} disagrees with header")
        return Codebook(codewords=codewords, version=int(doc["version"]), counts=doc.get("counts"))
    except (KeyError, json.JSONDecodeError) as e:
        raise FormatError(f"Malformed codebook dump {path}: {e}") from e
