"""Command handlers for codebook training and encoding."""

import argparse
import csv
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from core.cli import add_experiment_arguments
from core.exceptions import ConfigError
from modules.datasets.models import Split
from modules.datasets.service import load_experiment_dataset
from modules.datasets.utils import format_float, load_vectors, write_ivecs
from modules.embedding.storage import embed_with_checkpoint
from .models import QuantStats
from .service import encode_batch, train_codebook
from .storage import dump_codebook_text, load_codebook, save_codebook

logger = logging.getLogger(__name__)


# ==================== TRAIN CODEBOOK ====================

def cmd_train_codebook(args: argparse.Namespace, data: Dict[str, Any]) -> Path:
    """Train a codebook and write it with its per-iteration error curve.

    Training vectors come from --input, or from the experiment's training
    rows (embedded through --checkpoint when given).
    """
    cfg = data["config"]
    manifest = data.get("manifest")
    out = cfg.output_path

    if args.input:
        vectors = load_vectors(args.input)
    else:
        ds = load_experiment_dataset(cfg)
        vectors = ds.vectors[ds.rows(Split.TRAIN)]
    vectors = embed_with_checkpoint(vectors, args.checkpoint)

    curve = []

    def on_iteration(t: int, stats: QuantStats) -> None:
        curve.append((t, stats))

    cb = train_codebook(vectors, cfg.num_subspaces, cfg.num_codewords, cfg.kmeans_iters, cfg.seed, on_iteration)

    curve_path = out / "quant_error.csv"
    curve_path.parent.mkdir(parents=True, exist_ok=True)
    with open(curve_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "mean_error"] + [f"error_m{m}" for m in range(cb.M)])
        for t, stats in curve:
            writer.writerow([t, format_float(stats.mean_error)] + [format_float(e) for e in stats.per_subspace_error])

    paths = [save_codebook(cb, out / "codebook.sqcb"), dump_codebook_text(cb, out / "codebook.json"), curve_path]
    if manifest is not None:
        for path in paths:
            manifest.add_artifact(path)
        manifest.record_codebook(cb.version, 0, curve[-1][1].mean_error)
        manifest.add_metrics({"quantization_error": curve[-1][1].mean_error})

    logger.info(f"Codebook M={cb.M} K={cb.K} ({cb.code_bits} bits) written to {out}")
    return paths[0]


# ==================== ENCODE ====================

def cmd_encode(args: argparse.Namespace, data: Dict[str, Any]) -> Path:
    """Encode a vector file into an ivecs file of PQ codes."""
    cfg = data["config"]
    manifest = data.get("manifest")

    codebook_path = Path(args.codebook) if args.codebook else cfg.output_path / "codebook.sqcb"
    if not codebook_path.is_file():
        raise ConfigError(f"Codebook not found: {codebook_path}")
    cb = load_codebook(codebook_path)

    vectors = embed_with_checkpoint(load_vectors(args.input), args.checkpoint)
    codes = encode_batch(cb, vectors) if vectors.size else np.empty((0, cb.M), dtype=np.int64)

    output = Path(args.output) if args.output else cfg.output_path / "codes.ivecs"
    write_ivecs(output, codes)
    if manifest is not None:
        manifest.add_artifact(output)
    logger.info(f"Encoded {codes.shape[0]} vectors with codebook v{cb.version} into {output}")
    return output


def setup(subparsers) -> None:
    """Register vq subcommands.

    Args:
        subparsers: Root parser's subparsers action
    """
    p = subparsers.add_parser("train-codebook", help="train a PQ codebook (k-means per subspace)")
    add_experiment_arguments(p)
    p.add_argument("--input", type=Path, default=None, help="training vectors (.fvecs / .csv)")
    p.add_argument("--checkpoint", type=Path, default=None, help="embed the vectors with this network first")
    p.set_defaults(handler=cmd_train_codebook)

    p = subparsers.add_parser("encode", help="encode vectors into PQ codes")
    add_experiment_arguments(p)
    p.add_argument("--input", type=Path, required=True, help="vectors to encode (.fvecs / .csv)")
    p.add_argument("--codebook", type=Path, default=None, help="SQCB file (default: <out-dir>/codebook.sqcb)")
    p.add_argument("--checkpoint", type=Path, default=None, help="embed the vectors with this network first")
    p.add_argument("--output", type=Path, default=None, help="ivecs file (default: <out-dir>/codes.ivecs)")
    p.set_defaults(handler=cmd_encode)

    logger.debug("vq handlers registered")
