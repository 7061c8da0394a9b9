"""Experiment pipeline: joint embedding/codebook training, evaluation and sweeps.

One training iteration is one class-balanced batch: forward, triplet
selection, gradient (snapped, biased or raw), one momentum-SGD step. The
codebook is refreshed from the representations seen since the previous
refresh every ``update_interval`` iterations.
"""

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config, ExperimentConfig
from core.database import create_tables, get_session, init_database, is_initialized
from core.exceptions import ConfigError, DivergenceError, NonFiniteError
from modules.datasets.models import LabeledDataset, Split
from modules.datasets.service import load_experiment_dataset
from modules.datasets.utils import format_float
from modules.embedding.models import EmbeddingNet
from modules.embedding.service import (
    SgdMomentum,
    backward_apply,
    forward,
    init_network,
    select_triplets,
    triplet_batch_gradients,
)
from modules.embedding.storage import load_checkpoint, save_checkpoint
from modules.gsl.service import (
    baseline_alignment,
    baseline_biased_gradient,
    gsl_backward,
    gsl_forward,
    refresh_codebook,
)
from modules.gsl.utils import (
    SnapLogWriter,
    alignment_histogram,
    mean_alignment,
    rejection_rate,
    write_alignment_histograms,
)
from modules.retrieval.models import EvalReport
from modules.retrieval.service import evaluate_embeddings
from modules.retrieval.utils import write_map_table, write_precision_curve, write_recall
from modules.vq.models import Codebook
from modules.vq.service import quantization_error, train_codebook
from modules.vq.storage import dump_codebook_text, load_codebook, save_codebook
from .models import CodebookVersionRecord, RunManifest, RunRecord

logger = logging.getLogger(__name__)

MODES = ("gsl", "plain", "biased_baseline")
SWEEPS = ("update_interval", "neighbors", "code_bits")

TRAIN_LOG_COLUMNS = (
    "iteration", "epoch", "loss", "active_triplets", "quantization_error",
    "alignment", "rejection_rate", "baseline_alignment", "codebook_version",
)
SWEEP_COLUMNS = ("sweep", "value", "code_bits", "map_adc", "map_l2", "mean_alignment", "mean_baseline_alignment")

CHECKPOINT_NAME = "checkpoint.sqnn"
CODEBOOK_NAME = "codebook.sqcb"


# ==================== RESULTS ====================

@dataclass
class IterationLog:
    """Metrics of one training iteration (None where not applicable)."""

    iteration: int
    epoch: int
    loss: float
    active_triplets: int
    quantization_error: float
    alignment: Optional[float]
    rejection_rate: Optional[float]
    baseline_alignment: float
    codebook_version: int

    def row(self) -> List[str]:
        def fmt(v):
            return "" if v is None else format_float(v)
        return [
            str(self.iteration), str(self.epoch), fmt(self.loss), str(self.active_triplets),
            fmt(self.quantization_error), fmt(self.alignment), fmt(self.rejection_rate),
            fmt(self.baseline_alignment), str(self.codebook_version),
        ]


@dataclass(eq=False)
class TrainResult:
    """Trained network, evaluation codebook and the per-iteration history.

    ``alignments`` / ``baseline_alignments`` hold one value per snapped
    sample with a non-zero gradient (snapping alignments only in gsl mode).
    """

    net: EmbeddingNet
    cb: Codebook
    history: List[IterationLog] = field(default_factory=list)
    alignments: List[float] = field(default_factory=list)
    baseline_alignments: List[float] = field(default_factory=list)
    extra_alignments: Dict[int, List[float]] = field(default_factory=dict)


@dataclass
class AblationPoint:
    sweep: str
    value: int
    code_bits: int
    map_adc: float
    map_l2: float
    mean_alignment: float
    mean_baseline_alignment: float
    alignments: List[float] = field(default_factory=list)
    baseline_alignments: List[float] = field(default_factory=list)

    def row(self) -> List[str]:
        return [
            self.sweep, str(self.value), str(self.code_bits), format_float(self.map_adc),
            format_float(self.map_l2), format_float(self.mean_alignment),
            format_float(self.mean_baseline_alignment),
        ]


# ==================== BATCHING ====================

def triplet_labels(labels: np.ndarray) -> np.ndarray:
    """Integer classes for triplet mining; 0/1 label rows map to their lowest set label."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        return labels
    return np.where(labels.any(axis=1), labels.argmax(axis=1), -1)


def class_balanced_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """One epoch of batches, each with an equal number of rows from several classes.

    Every class contributes ``max(2, batch_size // num_classes)`` rows to a
    batch so each anchor has a positive; when that overshoots the batch size,
    a random subset of classes is drawn per batch. Classes are cycled through
    fresh permutations.
    """
    classes = np.unique(labels)
    if classes.shape[0] < 2:
        raise ConfigError("Training needs at least two classes")
    per_class = max(2, batch_size // classes.shape[0])
    classes_per_batch = max(2, min(classes.shape[0], batch_size // per_class))
    n_batches = max(1, labels.shape[0] // (per_class * classes_per_batch))

    members = {c: np.flatnonzero(labels == c) for c in classes}
    queues = {c: list(rng.permutation(members[c])) for c in classes}

    def take(c) -> List[int]:
        out: List[int] = []
        while len(out) < per_class:
            if not queues[c]:
                queues[c] = list(rng.permutation(members[c]))
            out.append(int(queues[c].pop()))
        return out

    batches = []
    for _ in range(n_batches):
        chosen = classes if classes_per_batch == classes.shape[0] else np.sort(
            rng.choice(classes, size=classes_per_batch, replace=False)
        )
        batches.append(np.array([i for c in chosen for i in take(c)], dtype=np.int64))
    return batches


# ==================== TRAINING ====================

def _initial_codebook(cfg: ExperimentConfig, net: EmbeddingNet, x: np.ndarray) -> Codebook:
    if cfg.codebook_path:
        cb = load_codebook(cfg.codebook_path)
        if cb.dim != cfg.embed_dim:
            raise ConfigError(f"Codebook dim {cb.dim} does not match EMBED_DIM={cfg.embed_dim}")
        return cb
    return train_codebook(forward(net, x), cfg.num_subspaces, cfg.num_codewords, cfg.kmeans_iters, seed=cfg.seed)


def run_training(
    cfg: ExperimentConfig,
    mode: Optional[str] = None,
    dataset: Optional[LabeledDataset] = None,
    manifest: Optional[RunManifest] = None,
    snap_log: Optional[SnapLogWriter] = None,
    extra_neighbors: Sequence[int] = (),
    max_epochs: Optional[int] = None,
) -> TrainResult:
    """Alternate embedding SGD steps with codebook refreshes.

    Args:
        cfg: Experiment configuration
        mode: ``gsl``, ``plain`` or ``biased_baseline`` (defaults to cfg.mode)
        dataset: Split dataset; loaded from cfg when omitted
        manifest: Receives the codebook version history
        snap_log: Receives every snapping decision (gsl mode)
        extra_neighbors: Extra neighbor counts whose snapping alignment is
            measured on the same batches without affecting training
        max_epochs: Stop early (alignment sweeps use one epoch)

    Raises:
        DivergenceError: If the loss or an update becomes non-finite
    """
    mode = mode or cfg.mode
    if mode not in MODES:
        raise ConfigError(f"Unknown training mode {mode!r}, expected one of {MODES}")

    ds = dataset if dataset is not None else load_experiment_dataset(cfg)
    train_rows = ds.rows(Split.TRAIN)
    x = ds.vectors[train_rows]
    labels = triplet_labels(ds.labels[train_rows])
    gcfg = cfg.gsl()
    snapping = mode == "gsl"

    net = init_network(ds.dim, cfg.hidden_dims, cfg.embed_dim, seed=cfg.seed)
    cb = _initial_codebook(cfg, net, x)
    if gcfg.neighbors > cb.K ** cb.M:
        logger.warning(f"Neighbor count {gcfg.neighbors} exceeds K^M={cb.K ** cb.M}; using {cb.K ** cb.M}")
        gcfg = replace(gcfg, neighbors=cb.K ** cb.M)
    optimizer = SgdMomentum(weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    if manifest is not None:
        manifest.record_codebook(cb.version, 0, quantization_error(cb, forward(net, x)).mean_error)

    result = TrainResult(net=net, cb=cb, extra_alignments={t: [] for t in extra_neighbors})
    extra_cfgs = {t: replace(gcfg, neighbors=min(t, cb.K ** cb.M)) for t in extra_neighbors}
    pending: List[np.ndarray] = []
    iteration = 0
    epochs = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)

    logger.info(
        f"Training mode={mode}: {x.shape[0]} rows, {epochs} epochs, net {net.describe()}, "
        f"M={cb.M} K={cb.K} T={gcfg.neighbors}"
    )

    for epoch in range(epochs):
        epoch_losses = []
        for batch_rows in class_balanced_batches(labels, cfg.batch_size, rng):
            xb = x[batch_rows]
            yb = forward(net, xb)
            if snapping:
                yb = gsl_forward(yb)
            triples = select_triplets(
                yb, labels[batch_rows], cfg.triplets_per_anchor, cfg.triplet_strategy,
                seed=int(rng.integers(2 ** 31)), margin=cfg.margin,
            )
            bundle = triplet_batch_gradients(yb, triples)
            if not np.isfinite(bundle.loss):
                raise DivergenceError(f"Loss became non-finite at iteration {iteration}")

            raw = bundle.gradients
            active = np.flatnonzero(np.any(raw != 0.0, axis=1))
            base_align = baseline_alignment(yb[active], raw[active], cb, gcfg.sign) if active.size else np.empty(0)
            result.baseline_alignments.extend(base_align.tolist())

            alignment = rate = None
            if snapping:
                grads, reports = gsl_backward(yb, raw, cb, gcfg)
                active_reports = [reports[i] for i in active]
                result.alignments.extend(r.alignment for r in active_reports)
                if active_reports:
                    alignment, rate = mean_alignment(active_reports), rejection_rate(active_reports)
                if snap_log is not None:
                    snap_log.write(iteration, reports, sample_ids=train_rows[batch_rows])
            elif mode == "biased_baseline":
                grads = baseline_biased_gradient(yb, raw, cb, cfg.baseline_lambda)
            else:
                grads = raw

            for t, pcfg in extra_cfgs.items():
                if active.size:
                    _, extra_reports = gsl_backward(yb[active], raw[active], cb, pcfg)
                    result.extra_alignments[t].extend(r.alignment for r in extra_reports)

            q_err = quantization_error(cb, yb).mean_error
            try:
                backward_apply(net, xb, grads, cfg.lr, cfg.momentum, optimizer)
            except NonFiniteError as e:
                raise DivergenceError(f"Training diverged at iteration {iteration}: {e}") from e

            # plain training leaves the codebook alone until the final fit
            if mode != "plain":
                pending.append(yb)
            if pending and (iteration + 1) % gcfg.update_interval == 0:
                stream = np.concatenate(pending)
                if gcfg.refresh_mode == "full_retrain" and stream.shape[0] < cb.K:
                    logger.debug(f"Refresh postponed: {stream.shape[0]} vectors < K={cb.K}")
                else:
                    cb = refresh_codebook(cb, stream, gcfg, seed=cfg.seed)
                    pending = []
                    if manifest is not None:
                        manifest.record_codebook(cb.version, iteration + 1, quantization_error(cb, stream).mean_error)

            log = IterationLog(
                iteration=iteration, epoch=epoch, loss=bundle.loss, active_triplets=bundle.active,
                quantization_error=q_err, alignment=alignment, rejection_rate=rate,
                baseline_alignment=float(base_align.mean()) if base_align.size else 0.0,
                codebook_version=cb.version,
            )
            result.history.append(log)
            epoch_losses.append(bundle.loss)
            logger.debug(
                f"iter {iteration}: loss={bundle.loss:.5f} qerr={q_err:.5f} "
                f"align={alignment if alignment is not None else '-'}"
            )
            iteration += 1

        logger.info(f"Epoch {epoch + 1}/{epochs}: mean loss {np.mean(epoch_losses):.5f}, codebook v{cb.version}")

    result.net = net
    if mode == "plain":
        # features without snapping: the codebook is fitted once to the final embeddings
        final = forward(net, x)
        fitted = train_codebook(final, cb.M, cb.K, cfg.kmeans_iters, seed=cfg.seed)
        result.cb = cb.successor(fitted.codewords, fitted.counts)
        if manifest is not None:
            manifest.record_codebook(result.cb.version, iteration, quantization_error(result.cb, final).mean_error)
    else:
        result.cb = cb
    return result


def write_train_log(path: Path, history: Sequence[IterationLog]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for log in history:
            writer.writerow(log.row())
    return path


def save_training_artifacts(
    cfg: ExperimentConfig,
    result: TrainResult,
    mode: str,
    manifest: Optional[RunManifest] = None,
) -> Dict[str, Path]:
    """Write checkpoint, codebook, train log and alignment histograms into the run directory."""
    out = cfg.output_path
    paths = {
        "checkpoint": save_checkpoint(result.net, out / CHECKPOINT_NAME, {"seed": cfg.seed, "mode": mode}),
        "codebook": save_codebook(result.cb, out / CODEBOOK_NAME),
        "train_log": write_train_log(out / "train_log.csv", result.history),
    }
    paths["codebook_text"] = dump_codebook_text(result.cb, out / "codebook.json")
    histograms = [("baseline", alignment_histogram(result.baseline_alignments))]
    if result.alignments:
        histograms.insert(0, ("gsl", alignment_histogram(result.alignments)))
    paths["alignment_histogram"] = write_alignment_histograms(out / "alignment_histogram.csv", histograms)

    if manifest is not None:
        for path in paths.values():
            manifest.add_artifact(path)
        manifest.add_artifact(out / Path(CHECKPOINT_NAME).with_suffix(".json"))
    logger.info(f"Training artifacts written to {out}")
    return paths


# ==================== EVALUATION ====================

def embed_split(net: EmbeddingNet, ds: LabeledDataset, include_train: bool = True):
    """(database vectors, database labels, query vectors, query labels) in embedding space."""
    db_rows = ds.database_rows(include_train)
    q_rows = ds.rows(Split.QUERY)
    return forward(net, ds.vectors[db_rows]), ds.labels[db_rows], forward(net, ds.vectors[q_rows]), ds.labels[q_rows]


def evaluate(
    cfg: ExperimentConfig,
    net: EmbeddingNet,
    cb: Codebook,
    dataset: Optional[LabeledDataset] = None,
) -> Tuple[EvalReport, EvalReport, List[Tuple[int, float]]]:
    """ADC and exhaustive-l2 MAP / precision@k plus ADC recall@k."""
    ds = dataset if dataset is not None else load_experiment_dataset(cfg)
    db, db_labels, queries, q_labels = embed_split(net, ds, cfg.database_includes_train)
    return evaluate_embeddings(
        cb, db, db_labels, queries, q_labels,
        cutoff=cfg.retrieval_cutoff, ks=cfg.precision_ks, multi_label=cfg.multi_label,
    )


def write_eval_reports(
    out_dir: Path,
    adc: EvalReport,
    l2: EvalReport,
    recall: Sequence[Tuple[int, float]],
    manifest: Optional[RunManifest] = None,
) -> Dict[str, Path]:
    paths = {
        "map": write_map_table(out_dir / "map.csv", [adc, l2]),
        "precision_at_k": write_precision_curve(out_dir / "precision_at_k.csv", [adc, l2]),
        "recall_at_k": write_recall(out_dir / "recall_at_k.csv", recall),
    }
    if manifest is not None:
        for path in paths.values():
            manifest.add_artifact(path)
        manifest.add_metrics({"map_adc": adc.map, "map_l2": l2.map})
    return paths


def load_trained(cfg: ExperimentConfig) -> Tuple[EmbeddingNet, Codebook]:
    """Checkpoint and codebook of a finished training run.

    Raises:
        ConfigError: If an artifact is missing
    """
    out = cfg.output_path
    checkpoint = out / CHECKPOINT_NAME
    codebook = Path(cfg.codebook_path) if cfg.codebook_path else out / CODEBOOK_NAME
    for path in (checkpoint, codebook):
        if not path.is_file():
            raise ConfigError(f"Missing artifact {path}; run 'train' first")
    net, _ = load_checkpoint(checkpoint)
    return net, load_codebook(codebook)


# ==================== ABLATION ====================

def sweep_config(cfg: ExperimentConfig, sweep: str, value: int, out_dir: Path) -> ExperimentConfig:
    """Config of one sweep point; code_bits sweeps vary M at fixed K."""
    if sweep not in SWEEPS:
        raise ConfigError(f"Unknown sweep {sweep!r}, expected one of {SWEEPS}")
    field_name = "num_subspaces" if sweep == "code_bits" else sweep
    return cfg.with_overrides(**{field_name: int(value), "out_dir": str(out_dir / f"{sweep}_{value}")})


def run_ablation_point(cfg: ExperimentConfig, sweep: str, value: int, dataset: LabeledDataset) -> AblationPoint:
    """One full train + eval; top-level so worker processes can run it."""
    result = run_training(cfg, dataset=dataset)
    adc, l2, _ = evaluate(cfg, result.net, result.cb, dataset)
    return AblationPoint(
        sweep=sweep,
        value=int(value),
        code_bits=cfg.code_bits,
        map_adc=adc.map,
        map_l2=l2.map,
        mean_alignment=float(np.mean(result.alignments)) if result.alignments else 0.0,
        mean_baseline_alignment=float(np.mean(result.baseline_alignments)) if result.baseline_alignments else 0.0,
        alignments=result.alignments,
        baseline_alignments=result.baseline_alignments,
    )


def sweep_workers(cfg: ExperimentConfig, points: int) -> int:
    """Worker processes for a sweep; deterministic runs (process or experiment setting) stay serial."""
    if Config.DETERMINISTIC or cfg.deterministic or points == 1:
        return 1
    return min(Config.SWEEP_WORKERS, points)


def run_ablation(
    cfg: ExperimentConfig,
    sweep: str,
    values: Sequence[int],
    dataset: Optional[LabeledDataset] = None,
) -> List[AblationPoint]:
    """Train and evaluate once per sweep value with shared seeds.

    Points run on ``sweep_workers`` processes. Results keep the order of
    ``values``.
    """
    if not values:
        raise ConfigError("Sweep needs at least one value")
    ds = dataset if dataset is not None else load_experiment_dataset(cfg)
    base = cfg.output_path / "ablate"
    configs = [sweep_config(cfg, sweep, v, base) for v in values]

    workers = sweep_workers(cfg, len(values))
    if workers == 1:
        points = [run_ablation_point(c, sweep, v, ds) for c, v in zip(configs, values)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_ablation_point, c, sweep, v, ds) for c, v in zip(configs, values)]
            points = [f.result() for f in futures]

    for point in points:
        logger.info(f"{sweep}={point.value}: MAP adc={point.map_adc:.4f} l2={point.map_l2:.4f}")
    return points


def write_sweep(path: Path, points: Sequence[AblationPoint]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for point in points:
            writer.writerow(point.row())
    return path


def write_sweep_histograms(path: Path, points: Sequence[AblationPoint]) -> Path:
    histograms = []
    for p in points:
        if p.alignments:
            histograms.append((f"{p.sweep}={p.value}:gsl", alignment_histogram(p.alignments)))
        histograms.append((f"{p.sweep}={p.value}:baseline", alignment_histogram(p.baseline_alignments)))
    return write_alignment_histograms(path, histograms)


def measure_alignment(
    cfg: ExperimentConfig,
    neighbors: Sequence[int] = (1, 32),
    dataset: Optional[LabeledDataset] = None,
) -> Dict[str, float]:
    """Mean snapping alignment per neighbor count and of the biased baseline.

    Every alignment is measured on the same batches of one gsl training
    epoch, so the values are directly comparable.
    """
    result = run_training(cfg, mode="gsl", dataset=dataset, extra_neighbors=neighbors, max_epochs=1)
    means = {f"T={t}": float(np.mean(v)) if v else 0.0 for t, v in result.extra_alignments.items()}
    means["baseline"] = float(np.mean(result.baseline_alignments)) if result.baseline_alignments else 0.0
    return means


# ==================== REGISTRY ====================

def record_run(manifest: RunManifest) -> Optional[int]:
    """Store the manifest in the run registry (no-op when it is disabled).

    Returns:
        Primary key of the run row, or None when the registry is disabled
    """
    if not Config.RUNS_DATABASE_URL:
        return None
    if not is_initialized():
        init_database(Config.RUNS_DATABASE_URL)
        create_tables()

    with get_session() as session:
        record = RunRecord(
            run_id=manifest.run_id,
            command=manifest.command,
            status=manifest.status,
            error=manifest.error,
            out_dir=str(manifest.directory),
            config_json=json.dumps(manifest.config, sort_keys=True),
            metrics_json=json.dumps(manifest.metrics, sort_keys=True),
            total_seconds=manifest.timings.get("total_seconds"),
        )
        record.codebook_versions = [
            CodebookVersionRecord(version=v.version, iteration=v.iteration, quantization_error=v.quantization_error)
            for v in manifest.codebook_versions
        ]
        session.add(record)
        session.flush()
        logger.debug(f"Registered {record!r}")
        return record.id
