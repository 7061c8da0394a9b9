"""Synthetic data, the query/train split protocol and experiment data loading."""

import logging
from pathlib import Path
from typing import Optional

import numpy as np

from core.exceptions import ClassTooSmallError, ConfigError, InsufficientDataError
from .models import LabeledDataset, Split, SyntheticSpec
from .utils import load_csv, load_fvecs, load_labels

logger = logging.getLogger(__name__)


def synthetic_centers(spec: SyntheticSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Class centers of ``make_synthetic(spec)``, float32 (num_classes, dim).

    The centers are the first draw from the spec's seeded generator; pass
    ``rng`` to continue drawing from it afterwards.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return rng.normal(0.0, spec.center_scale, size=(spec.num_classes, spec.dim)).astype(np.float32)


def make_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Isotropic Gaussian clusters around random centers, class-major order.

    The same SyntheticSpec always yields the same bytes.
    """
    rng = np.random.default_rng(spec.seed)
    centers = synthetic_centers(spec, rng)
    if spec.num_classes > 1 and np.unique(centers, axis=0).shape[0] != spec.num_classes:
        raise ValueError("Synthetic class centers collide; pick another seed")

    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), spec.per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.shape[0], spec.dim)) * spec.cluster_std
    vectors = (centers[labels].astype(np.float64) + noise).astype(np.float32)

    logger.info(
        f"Generated synthetic dataset: {spec.num_classes} classes x {spec.per_class} points, "
        f"dim={spec.dim}, std={spec.cluster_std}, seed={spec.seed}"
    )
    return LabeledDataset(vectors=vectors, labels=labels, source=f"synthetic:{spec.seed}")


def _sampling_classes(ds: LabeledDataset) -> np.ndarray:
    # multi-label rows are grouped by their lowest set label (-1 when none)
    if not ds.multi_label:
        return ds.labels
    has_label = ds.labels.any(axis=1)
    return np.where(has_label, ds.labels.argmax(axis=1), -1)


def split_protocol(
    ds: LabeledDataset,
    queries_per_class: int = 100,
    train_per_class: int = 500,
    seed: int = 0,
) -> LabeledDataset:
    """Tag rows as query / train / database.

    Per class, rows are permuted with one generator and the first
    ``queries_per_class`` become queries, the next ``train_per_class`` (clamped
    to what remains) become training rows; the rest are database-only.

    Raises:
        ClassTooSmallError: If a class has fewer than queries_per_class + 1 rows
        ValueError: On negative counts
    """
    if queries_per_class < 1 or train_per_class < 0:
        raise ValueError("queries_per_class must be >= 1 and train_per_class >= 0")
    if len(ds) == 0:
        raise InsufficientDataError("Cannot split an empty dataset")

    groups = _sampling_classes(ds)
    rng = np.random.default_rng(seed)
    tags = np.full(len(ds), Split.DATABASE.value, dtype=object)

    for cls in np.unique(groups):
        rows = np.flatnonzero(groups == cls)
        if rows.shape[0] < queries_per_class + 1:
            raise ClassTooSmallError(
                f"Class {cls} has {rows.shape[0]} rows, needs at least {queries_per_class + 1}"
            )
        perm = rows[rng.permutation(rows.shape[0])]
        n_train = min(train_per_class, rows.shape[0] - queries_per_class)
        if n_train < train_per_class:
            logger.warning(f"Class {cls}: only {n_train} training rows available (asked {train_per_class})")
        tags[perm[:queries_per_class]] = Split.QUERY.value
        tags[perm[queries_per_class:queries_per_class + n_train]] = Split.TRAIN.value

    split = LabeledDataset(vectors=ds.vectors, labels=ds.labels, splits=tags, source=ds.source)
    logger.info(
        f"Split {len(ds)} rows: {split.rows(Split.QUERY).shape[0]} query, "
        f"{split.rows(Split.TRAIN).shape[0]} train, {split.rows(Split.DATABASE).shape[0]} database-only"
    )
    return split


def load_source(cfg) -> LabeledDataset:
    """Load (or generate) the raw dataset an ExperimentConfig refers to.

    Raises:
        ConfigError: If labels are missing or the file type is unknown
    """
    if cfg.data_source == "synthetic":
        return make_synthetic(SyntheticSpec(
            num_classes=cfg.synth_classes,
            per_class=cfg.synth_per_class,
            dim=cfg.synth_dim,
            cluster_std=cfg.synth_cluster_std,
            center_scale=cfg.synth_center_scale,
            seed=cfg.seed,
        ))

    path = Path(cfg.data_source)
    if path.suffix == ".fvecs":
        vectors = load_fvecs(path)
        if not cfg.labels_path:
            raise ConfigError("LABELS_PATH is required for fvecs data")
        labels = load_labels(cfg.labels_path)
    elif path.suffix == ".csv":
        vectors, labels = load_csv(path)
        if cfg.labels_path:
            labels = load_labels(cfg.labels_path)
        if labels is None:
            raise ConfigError(f"{path} has no label column and LABELS_PATH is empty")
    else:
        raise ConfigError(f"Unsupported data file type: {path.suffix or path.name}")

    if cfg.multi_label and labels.ndim != 2:
        raise ConfigError("MULTI_LABEL=true needs a 0/1 label matrix")
    return LabeledDataset(vectors=vectors, labels=labels, source=str(path))


def load_experiment_dataset(cfg) -> LabeledDataset:
    """Raw dataset with the split protocol of the experiment applied."""
    return split_protocol(load_source(cfg), cfg.queries_per_class, cfg.train_per_class, seed=cfg.seed)
