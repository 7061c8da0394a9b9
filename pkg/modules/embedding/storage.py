"""Network checkpoints.

Binary ``SQNN`` layout (little-endian)::

    magic "SQNN" | format version u32 | layer count u32
    per layer:   in_dim u32 | out_dim u32 | activation tag u32 (0 relu, 1 identity)
                 weight float32[in_dim * out_dim] (row-major) | bias float32[out_dim]

Text metadata (seed, hyper-parameters) lives in a JSON file beside it.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from core.exceptions import FormatError
from .models import ACTIVATIONS, DenseLayer, EmbeddingNet

logger = logging.getLogger(__name__)

MAGIC = b"SQNN"
FORMAT_VERSION = 1

HEADER_DTYPE = np.dtype([("magic", "S4"), ("format_version", "<u4"), ("layers", "<u4")])
LAYER_DTYPE = np.dtype([("in_dim", "<u4"), ("out_dim", "<u4"), ("activation", "<u4")])


def network_to_bytes(net: EmbeddingNet) -> bytes:
    """Serialize a network into the SQNN layout."""
    parts = [np.array([(MAGIC, FORMAT_VERSION, len(net.layers))], dtype=HEADER_DTYPE).tobytes()]
    for layer in net.layers:
        tag = ACTIVATIONS.index(layer.activation)
        parts.append(np.array([(layer.in_dim, layer.out_dim, tag)], dtype=LAYER_DTYPE).tobytes())
        parts.append(layer.weight.astype("<f4").tobytes(order="C"))
        parts.append(layer.bias.astype("<f4").tobytes())
    return b"".join(parts)


def network_from_bytes(payload: bytes) -> EmbeddingNet:
    """Parse an SQNN payload.

    Raises:
        FormatError: On bad magic, unknown version, bad tag or truncation
    """
    if len(payload) < HEADER_DTYPE.itemsize:
        raise FormatError("Truncated SQNN header", offset=len(payload))
    header = np.frombuffer(payload, dtype=HEADER_DTYPE, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise FormatError(f"Bad magic {bytes(header['magic'])!r}, expected {MAGIC!r}", offset=0)
    if int(header["format_version"]) != FORMAT_VERSION:
        raise FormatError(f"Unsupported SQNN format version {int(header['format_version'])}", offset=4)

    offset = HEADER_DTYPE.itemsize
    layers = []
    for _ in range(int(header["layers"])):
        if offset + LAYER_DTYPE.itemsize > len(payload):
            raise FormatError("Truncated layer header", offset=offset)
        spec = np.frombuffer(payload, dtype=LAYER_DTYPE, count=1, offset=offset)[0]
        offset += LAYER_DTYPE.itemsize
        in_dim, out_dim, tag = int(spec["in_dim"]), int(spec["out_dim"]), int(spec["activation"])
        if tag >= len(ACTIVATIONS):
            raise FormatError(f"Unknown activation tag {tag}", offset=offset - 4)
        n_floats = in_dim * out_dim + out_dim
        if offset + 4 * n_floats > len(payload):
            raise FormatError("Truncated layer parameters", offset=offset)
        flat = np.frombuffer(payload, dtype="<f4", count=n_floats, offset=offset)
        offset += 4 * n_floats
        layers.append(DenseLayer(
            weight=flat[:in_dim * out_dim].reshape(in_dim, out_dim),
            bias=flat[in_dim * out_dim:],
            activation=ACTIVATIONS[tag],
        ))
    if offset != len(payload):
        raise FormatError(f"{len(payload) - offset} trailing bytes after last layer", offset=offset)
    return EmbeddingNet(layers)


def save_checkpoint(
    net: EmbeddingNet,
    path: Union[str, Path],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write the SQNN file and its JSON metadata (same stem, .json)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(network_to_bytes(net))
    meta = {"format": "SQNN", "format_version": FORMAT_VERSION, "architecture": net.describe()}
    meta.update(metadata or {})
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Saved checkpoint {net!r} to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[EmbeddingNet, Dict[str, Any]]:
    """Read a checkpoint and its metadata (empty dict when absent).

    Raises:
        FormatError: If the binary is malformed
    """
    path = Path(path)
    net = network_from_bytes(path.read_bytes())
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.is_file() else {}
    logger.info(f"Loaded checkpoint {net!r} from {path}")
    return net, meta


def embed_with_checkpoint(vectors, path: Optional[Union[str, Path]]) -> np.ndarray:
    """Map raw vectors through a saved network; without a checkpoint they pass through."""
    if not path:
        return np.asarray(vectors, dtype=np.float32)
    from .service import forward

    net, _ = load_checkpoint(path)
    return forward(net, vectors).astype(np.float32)
