"""Command handler for nearest-neighbor search."""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict

from core.cli import add_experiment_arguments
from core.exceptions import ConfigError
from modules.datasets.utils import load_vectors
from modules.embedding.storage import embed_with_checkpoint
from modules.vq.storage import load_codebook
from .service import build_index, exhaustive_l2_search, search
from .utils import write_rankings

logger = logging.getLogger(__name__)


def cmd_search(args: argparse.Namespace, data: Dict[str, Any]) -> Path:
    """Rank a database for every query and write the rankings CSV."""
    cfg = data["config"]
    manifest = data.get("manifest")

    database = embed_with_checkpoint(load_vectors(args.database), args.checkpoint)
    queries = embed_with_checkpoint(load_vectors(args.queries), args.checkpoint)

    if args.exact:
        rankings = [exhaustive_l2_search(database, q, args.limit) for q in queries]
    else:
        codebook_path = Path(args.codebook) if args.codebook else cfg.output_path / "codebook.sqcb"
        if not codebook_path.is_file():
            raise ConfigError(f"Codebook not found: {codebook_path}")
        index = build_index(load_codebook(codebook_path), database)
        rankings = [search(index, q, args.limit) for q in queries]

    output = Path(args.output) if args.output else cfg.output_path / "rankings.csv"
    write_rankings(output, rankings)
    if manifest is not None:
        manifest.add_artifact(output)
    logger.info(f"Ranked {len(rankings)} queries ({'l2' if args.exact else 'adc'}) into {output}")
    return output


def setup(subparsers) -> None:
    """Register the search subcommand."""
    p = subparsers.add_parser("search", help="ADC (or exhaustive l2) search of a vector database")
    add_experiment_arguments(p)
    p.add_argument("--database", type=Path, required=True, help="database vectors (.fvecs / .csv)")
    p.add_argument("--queries", type=Path, required=True, help="query vectors (.fvecs / .csv)")
    p.add_argument("--limit", type=int, default=10, help="results per query")
    p.add_argument("--codebook", type=Path, default=None, help="SQCB file (default: <out-dir>/codebook.sqcb)")
    p.add_argument("--checkpoint", type=Path, default=None, help="embed database and queries first")
    p.add_argument("--exact", action="store_true", help="exhaustive l2 search instead of ADC")
    p.add_argument("--output", type=Path, default=None, help="CSV file (default: <out-dir>/rankings.csv)")
    p.set_defaults(handler=cmd_search)
