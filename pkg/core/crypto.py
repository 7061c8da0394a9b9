"""Artifact fingerprints.

Provides SHA-256 digests of files so run manifests can pin
exactly which codebook, checkpoint and metric files a run produced.
"""

from cryptography.hazmat.primitives import hashes
import logging
from pathlib import Path
from typing import Union

logger = logging.getLogger(__name__)

CHUNK_SIZE = 65536  # 64KB chunks


class ArtifactFingerprint:
    """Incremental SHA-256 digest of artifact contents."""

    def __init__(self):
        self._digest = hashes.Hash(hashes.SHA256())

    def update(self, data: bytes) -> "ArtifactFingerprint":
        """Feed more bytes.

        Args:
            data: Raw bytes

        Returns:
            self, for chaining
        """
        self._digest.update(data)
        return self

    def hexdigest(self) -> str:
        """Finalize and return the hex digest.

        The fingerprint cannot be updated afterwards.
        """
        return self._digest.finalize().hex()


def fingerprint_file(path: Union[str, Path]) -> str:
    """Return the SHA-256 hex digest of a file.

    Args:
        path: File to hash

    Raises:
        FileNotFoundError: If the file does not exist
    """
    fp = ArtifactFingerprint()
    with open(path, "rb") as f:
        while True:
            chunk = f.read(CHUNK_SIZE)
            if not chunk:
                break
            fp.update(chunk)
    digest = fp.hexdigest()
    logger.debug(f"Fingerprinted {path}: {digest[:12]}")
    return digest
