"""Product quantization module.

This module provides PQ codebooks and the operations on them.

Features:
- k-means codebook training per subspace
- Encoding, decoding and quantization error
- Asymmetric distance computation tables
- Nearest full-codeword enumeration
- Streaming (sequential k-means) codebook refresh
- SQCB binary and JSON codebook files
"""

from .handlers import setup

__all__ = ['setup']
