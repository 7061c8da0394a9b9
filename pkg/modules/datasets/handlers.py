"""Command handler for synthetic data generation."""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict

from core.cli import add_experiment_arguments
from .models import SyntheticSpec
from .service import make_synthetic
from .utils import write_csv, write_fvecs, write_ivecs

logger = logging.getLogger(__name__)


def cmd_synth(args: argparse.Namespace, data: Dict[str, Any]) -> Dict[str, Path]:
    """Write the synthetic dataset of the experiment as fvecs/ivecs or CSV."""
    cfg = data["config"]
    manifest = data.get("manifest")
    out = cfg.output_path

    ds = make_synthetic(SyntheticSpec(
        num_classes=cfg.synth_classes,
        per_class=cfg.synth_per_class,
        dim=cfg.synth_dim,
        cluster_std=cfg.synth_cluster_std,
        center_scale=cfg.synth_center_scale,
        seed=cfg.seed,
    ))

    if args.format == "csv":
        paths = {"data": write_csv(out / "synthetic.csv", ds.vectors, ds.labels)}
    else:
        paths = {
            "data": write_fvecs(out / "synthetic.fvecs", ds.vectors),
            "labels": write_ivecs(out / "synthetic_labels.ivecs", ds.labels.reshape(-1, 1)),
        }

    if manifest is not None:
        for path in paths.values():
            manifest.add_artifact(path)
    logger.info(f"Wrote {len(ds)} synthetic rows to {out}")
    return paths


def setup(subparsers) -> None:
    """Register the synth subcommand."""
    p = subparsers.add_parser("synth", help="generate the synthetic labeled-cluster dataset")
    add_experiment_arguments(p)
    p.add_argument("--format", choices=("fvecs", "csv"), default="fvecs", help="output container")
    p.set_defaults(handler=cmd_synth)
