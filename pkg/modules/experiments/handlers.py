"""Command handlers for training, evaluation and ablation sweeps."""

import argparse
import contextlib
import logging
from pathlib import Path
from typing import Any, Dict, List

from core.cli import add_experiment_arguments
from core.exceptions import ConfigError
from modules.gsl.utils import SnapLogWriter
from .plots import plot_alignment_histograms, plot_sweep
from .service import (
    MODES,
    SWEEPS,
    evaluate,
    load_trained,
    run_ablation,
    run_training,
    save_training_artifacts,
    write_eval_reports,
    write_sweep,
    write_sweep_histograms,
)

logger = logging.getLogger(__name__)


# ==================== TRAIN ====================

def cmd_train(args: argparse.Namespace, data: Dict[str, Any]) -> Dict[str, Path]:
    """Train the embedding network (gsl, plain or biased_baseline)."""
    cfg = data["config"]
    manifest = data.get("manifest")
    if args.mode:
        cfg = cfg.with_overrides(mode=args.mode)
        data["config"] = cfg
        if manifest is not None:
            manifest.attach_config(cfg)
    cfg.check_files()

    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_file(out / "experiment.env")

    snap_log = SnapLogWriter(out / "snap_log.csv") if cfg.snap_log and cfg.mode == "gsl" else None
    with snap_log if snap_log is not None else contextlib.nullcontext():
        result = run_training(cfg, manifest=manifest, snap_log=snap_log)

    paths = save_training_artifacts(cfg, result, cfg.mode, manifest)
    if snap_log is not None:
        paths["snap_log"] = snap_log.path
    if manifest is not None:
        manifest.add_artifact(out / "experiment.env")
        if snap_log is not None:
            manifest.add_artifact(snap_log.path)
        last = result.history[-1] if result.history else None
        if last is not None:
            manifest.add_metrics({"final_loss": last.loss, "final_quantization_error": last.quantization_error})
    return paths


# ==================== EVAL ====================

def cmd_eval(args: argparse.Namespace, data: Dict[str, Any]) -> Dict[str, Path]:
    """Evaluate a trained run with ADC and exhaustive l2 search."""
    cfg = data["config"]
    cfg.check_files()
    net, cb = load_trained(cfg)
    adc, l2, recall = evaluate(cfg, net, cb)
    logger.info(f"MAP adc={adc.map:.4f} l2={l2.map:.4f} over {adc.num_queries} queries")
    return write_eval_reports(cfg.output_path, adc, l2, recall, data.get("manifest"))


# ==================== ABLATE ====================

def parse_values(raw: str) -> List[int]:
    try:
        values = [int(v) for v in raw.replace(" ", "").split(",") if v]
    except ValueError as e:
        raise ConfigError(f"Sweep values must be comma-separated integers: {raw!r}") from e
    if not values:
        raise ConfigError("Sweep needs at least one value")
    return values


def cmd_ablate(args: argparse.Namespace, data: Dict[str, Any]) -> Dict[str, Path]:
    """One train + eval per sweep value; writes the sweep table and histograms."""
    cfg = data["config"]
    manifest = data.get("manifest")
    cfg.check_files()
    values = parse_values(args.values)

    points = run_ablation(cfg, args.sweep, values)

    out = cfg.output_path
    paths = {
        "sweep": write_sweep(out / f"sweep_{args.sweep}.csv", points),
        "histograms": write_sweep_histograms(out / f"alignment_{args.sweep}.csv", points),
    }
    if args.plot:
        paths["sweep_plot"] = plot_sweep(points, out / f"sweep_{args.sweep}.png")
        series = []
        for p in points:
            if p.alignments:
                series.append((f"{args.sweep}={p.value}", p.alignments))
        series.append(("output regularization", points[0].baseline_alignments))
        paths["histogram_plot"] = plot_alignment_histograms(series, out / f"alignment_{args.sweep}.png")

    if manifest is not None:
        for path in paths.values():
            manifest.add_artifact(path)
        manifest.add_metrics({f"map_adc[{p.sweep}={p.value}]": p.map_adc for p in points})
    return paths


def setup(subparsers) -> None:
    """Register train, eval and ablate."""
    p = subparsers.add_parser("train", help="train the embedding network with alternating codebook refresh")
    add_experiment_arguments(p)
    p.add_argument("--mode", choices=MODES, default=None, help="override MODE")
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser("eval", help="MAP / precision@k / recall@k of a trained run")
    add_experiment_arguments(p)
    p.set_defaults(handler=cmd_eval)

    p = subparsers.add_parser("ablate", help="sweep one hyper-parameter with shared seeds")
    add_experiment_arguments(p)
    p.add_argument("--sweep", choices=SWEEPS, required=True, help="parameter to sweep")
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 1,8,32")
    p.add_argument("--plot", action="store_true", help="also render PNG figures")
    p.set_defaults(handler=cmd_ablate)
