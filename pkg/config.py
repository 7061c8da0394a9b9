"""Application configuration.

Two layers:

- ``Config`` holds process settings loaded from environment variables with
  sensible defaults (logging, output directory, run registry).
- ``ExperimentConfig`` describes one experiment and is read from / written to
  a human-readable ``KEY=VALUE`` file with stable key names.
"""

import os
import logging
from dataclasses import dataclass, fields, asdict, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values

from core.exceptions import ConfigError

logger = logging.getLogger(__name__)

# Base directory
BASE_DIR = Path(__file__).parent


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Process configuration loaded from environment variables."""

    # Output
    OUTPUT_DIR: Path = Path(os.getenv("OUTPUT_DIR", str(BASE_DIR / "runs")))

    # Run registry (empty string disables it)
    RUNS_DATABASE_URL: str = os.getenv(
        "RUNS_DATABASE_URL",
        f"sqlite:///{BASE_DIR / 'runs.db'}"
    )

    # Reproducibility
    DETERMINISTIC: bool = _env_bool("DETERMINISTIC", "true")
    SWEEP_WORKERS: int = int(os.getenv("SWEEP_WORKERS", "1"))

    # Enabled modules
    ENABLED_MODULES: List[str] = [
        m.strip() for m in os.getenv(
            "ENABLED_MODULES",
            "modules.datasets,modules.vq,modules.retrieval,modules.experiments"
        ).split(",") if m.strip()
    ]

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    LOG_FILE: str = os.getenv("LOG_FILE", "")

    @classmethod
    def validate(cls) -> None:
        """Validate process configuration.

        Raises:
            ValueError: If a setting is out of range
        """
        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"LOG_LEVEL must be a logging level name, got {cls.LOG_LEVEL!r}")

        if cls.SWEEP_WORKERS < 1:
            raise ValueError("SWEEP_WORKERS must be >= 1")

        if cls.RUNS_DATABASE_URL and not cls.RUNS_DATABASE_URL.startswith("sqlite"):
            logger.warning(f"Run registry is not SQLite: {cls.RUNS_DATABASE_URL}")

    @classmethod
    def print_config(cls) -> None:
        """Log current configuration."""
        logger.info("=" * 50)
        logger.info("Configuration:")
        logger.info("=" * 50)
        logger.info(f"Output directory: {cls.OUTPUT_DIR}")
        logger.info(f"Run registry: {cls.RUNS_DATABASE_URL or 'DISABLED'}")
        logger.info(f"Deterministic: {cls.DETERMINISTIC}")
        logger.info(f"Sweep workers: {cls.SWEEP_WORKERS}")
        logger.info(f"Enabled modules: {', '.join(cls.ENABLED_MODULES)}")
        logger.info(f"Log level: {cls.LOG_LEVEL}")
        logger.info("=" * 50)


def _parse_ints(raw: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)


_TUPLE_FIELDS = ("hidden_dims", "precision_ks")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    The file form is one ``KEY=VALUE`` pair per line; keys are the upper-cased
    field names.
    """

    # Dataset source and split
    data_source: str = "synthetic"          # "synthetic" or a path to .fvecs / .csv
    labels_path: str = ""                   # .ivecs / single-column CSV when data_source is fvecs
    synth_classes: int = 10
    synth_per_class: int = 600
    synth_dim: int = 32
    synth_cluster_std: float = 0.5
    synth_center_scale: float = 0.5
    queries_per_class: int = 100
    train_per_class: int = 500
    database_includes_train: bool = True
    multi_label: bool = False

    # Network
    hidden_dims: Tuple[int, ...] = (64, 64)
    embed_dim: int = 16

    # Loss and triplet selection
    margin: float = 1.0
    triplets_per_anchor: int = 3
    triplet_strategy: str = "semi_hard"

    # Gradient snapping
    gsl_lambda: float = 0.036
    neighbors: int = 32
    f_variant: str = "gaussian_sqdist"
    selection_sign: str = "paper_literal"
    lambda1_denominator: str = "cosine_squared"
    update_interval: int = 1
    refresh_mode: str = "sequential_kmeans"
    baseline_lambda: float = 0.036

    # Codebook
    num_subspaces: int = 4
    num_codewords: int = 16
    kmeans_iters: int = 25
    codebook_path: str = ""

    # Training
    mode: str = "gsl"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 5
    batch_size: int = 60
    seed: int = 0
    deterministic: bool = True
    snap_log: bool = False

    # Evaluation
    retrieval_cutoff: int = 0               # 0 means the whole database
    precision_ks: Tuple[int, ...] = (1, 5, 10, 20, 50, 100)

    # Output
    out_dir: str = ""                       # empty means OUTPUT_DIR/default

    def __post_init__(self) -> None:
        self.validate()

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def validate(self) -> None:
        """Check numeric ranges and enum values.

        Raises:
            ConfigError: On the first invalid setting
        """
        positive = (
            "synth_classes", "synth_per_class", "synth_dim", "queries_per_class",
            "embed_dim", "triplets_per_anchor", "neighbors", "update_interval",
            "num_subspaces", "num_codewords", "kmeans_iters", "epochs", "batch_size",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name.upper()} must be >= 1, got {getattr(self, name)}")

        if self.train_per_class < 0:
            raise ConfigError("TRAIN_PER_CLASS must be >= 0")
        if self.synth_cluster_std < 0:
            raise ConfigError("SYNTH_CLUSTER_STD must be >= 0")
        if self.margin < 0:
            raise ConfigError("MARGIN must be >= 0")
        if self.gsl_lambda <= 0:
            raise ConfigError("GSL_LAMBDA must be > 0")
        if self.baseline_lambda < 0:
            raise ConfigError("BASELINE_LAMBDA must be >= 0")
        if self.lr <= 0:
            raise ConfigError("LR must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("MOMENTUM must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("WEIGHT_DECAY must be >= 0")
        if self.retrieval_cutoff < 0:
            raise ConfigError("RETRIEVAL_CUTOFF must be >= 0")
        if self.embed_dim % self.num_subspaces != 0:
            raise ConfigError(
                f"EMBED_DIM={self.embed_dim} must be divisible by NUM_SUBSPACES={self.num_subspaces}"
            )
        if any(k < 1 for k in self.precision_ks) or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("PRECISION_KS and HIDDEN_DIMS must hold positive integers")

        from modules.gsl.models import SELECTION_SIGN_ALIASES, SELECTION_SIGNS

        self.selection_sign = SELECTION_SIGN_ALIASES.get(self.selection_sign, self.selection_sign)
        choices = {
            "selection_sign": SELECTION_SIGNS,
            "triplet_strategy": ("semi_hard", "random"),
            "f_variant": ("gaussian_sqdist", "literal"),
            "lambda1_denominator": ("literal", "cosine_squared"),
            "refresh_mode": ("sequential_kmeans", "full_retrain"),
            "mode": ("gsl", "plain", "biased_baseline"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name.upper()} must be one of {allowed}, got {getattr(self, name)!r}")

    def check_files(self) -> None:
        """Verify that referenced input files exist.

        Raises:
            ConfigError: If a referenced file is missing
        """
        if self.data_source != "synthetic" and not Path(self.data_source).is_file():
            raise ConfigError(f"DATA_SOURCE file not found: {self.data_source}")
        if self.labels_path and not Path(self.labels_path).is_file():
            raise ConfigError(f"LABELS_PATH file not found: {self.labels_path}")
        if self.codebook_path and not Path(self.codebook_path).is_file():
            raise ConfigError(f"CODEBOOK_PATH file not found: {self.codebook_path}")

    # ------------------------------------------------------------------
    # derived views
    # ------------------------------------------------------------------

    @property
    def output_path(self) -> Path:
        """Run directory: OUT_DIR, or OUTPUT_DIR/default when unset."""
        return Path(self.out_dir) if self.out_dir else Config.OUTPUT_DIR / "default"

    @property
    def code_bits(self) -> int:
        return self.num_subspaces * max(1, (self.num_codewords - 1).bit_length())

    def gsl(self):
        """Build the GslConfig for this experiment."""
        from modules.gsl.models import GslConfig

        return GslConfig(
            lam=self.gsl_lambda,
            neighbors=self.neighbors,
            f_variant=self.f_variant,
            selection_sign=self.selection_sign,
            lambda1_denominator=self.lambda1_denominator,
            update_interval=self.update_interval,
            refresh_mode=self.refresh_mode,
        )

    def with_overrides(self, **changes: Any) -> "ExperimentConfig":
        """Return a validated copy with some fields replaced."""
        return replace(self, **changes)

    # ------------------------------------------------------------------
    # file form
    # ------------------------------------------------------------------

    def to_mapping(self) -> Dict[str, str]:
        """Serialize to stable upper-case keys and string values."""
        out: Dict[str, str] = {}
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, (tuple, list)):
                text = ",".join(str(v) for v in value)
            else:
                text = str(value)
            out[key.upper()] = text
        return out

    @classmethod
    def from_mapping(cls, values: Mapping[str, Optional[str]]) -> "ExperimentConfig":
        """Parse a mapping of upper-case keys to strings.

        Missing keys keep their defaults.

        Raises:
            ConfigError: On unknown keys or unparsable values
        """
        by_key = {f.name.upper(): f for f in fields(cls)}
        kwargs: Dict[str, Any] = {}
        for key, raw in values.items():
            spec = by_key.get(key.upper())
            if spec is None:
                raise ConfigError(f"Unknown experiment key: {key}")
            raw = "" if raw is None else raw.strip()
            default = getattr(cls, spec.name, None)
            try:
                if spec.name in _TUPLE_FIELDS:
                    kwargs[spec.name] = _parse_ints(raw)
                elif isinstance(default, bool):
                    if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(f"not a boolean: {raw!r}")
                    kwargs[spec.name] = raw.lower() in ("true", "1", "yes")
                elif isinstance(default, int):
                    kwargs[spec.name] = int(raw)
                elif isinstance(default, float):
                    kwargs[spec.name] = float(raw)
                else:
                    kwargs[spec.name] = raw
            except ValueError as e:
                raise ConfigError(f"Invalid value for {key}: {e}") from e
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: Path) -> "ExperimentConfig":
        """Load an experiment file.

        Raises:
            ConfigError: If the file is missing or invalid
        """
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Experiment config not found: {path}")
        logger.info(f"Loading experiment config from {path}")
        return cls.from_mapping(dotenv_values(path))

    def to_file(self, path: Path) -> None:
        """Write the experiment file with every key spelled out."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["# Experiment configuration (KEY=VALUE, keys are stable)"]
        lines += [f"{key}={value}" for key, value in self.to_mapping().items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# Validate configuration on import
Config.validate()
