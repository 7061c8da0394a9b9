"""Run manifests and run registry models."""

import json
import logging
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func

from config import Config
from core import __version__
from core.crypto import fingerprint_file
from core.database import Base

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


# ==================== MANIFEST ====================

@dataclass
class CodebookVersion:
    """One committed codebook snapshot during a run."""

    version: int
    iteration: int
    quantization_error: float


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit one command.

    ``timings``, ``run_id`` and ``started_at`` change from run to run; the
    rest is identical for identical configs in deterministic mode (see
    ``reproducible_view``).
    """

    command: str
    out_dir: Optional[Path] = None
    config: Dict[str, str] = field(default_factory=dict)
    code_version: str = __version__
    status: str = "running"
    error: str = ""
    codebook_versions: List[CodebookVersion] = field(default_factory=list)
    metrics: Dict[str, float] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    @property
    def directory(self) -> Path:
        return self.out_dir if self.out_dir is not None else Config.OUTPUT_DIR / "default"

    def attach_config(self, cfg) -> None:
        """Record the resolved experiment config and adopt its output directory."""
        self.config = cfg.to_mapping()
        self.out_dir = cfg.output_path

    def record_codebook(self, version: int, iteration: int, quantization_error: float) -> None:
        self.codebook_versions.append(CodebookVersion(version, iteration, float(quantization_error)))

    def add_artifact(self, path: Union[str, Path]) -> str:
        """Fingerprint a written file and list it under its name relative to the run directory."""
        path = Path(path)
        digest = fingerprint_file(path)
        try:
            name = str(path.relative_to(self.directory))
        except ValueError:
            name = str(path)
        self.artifacts[name] = digest
        return digest

    def add_metrics(self, metrics: Dict[str, float]) -> None:
        self.metrics.update({k: float(v) for k, v in metrics.items()})

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["out_dir"] = str(self.directory)
        return data

    def reproducible_view(self) -> Dict[str, Any]:
        """The manifest without per-invocation fields."""
        data = self.to_dict()
        for key in ("timings", "run_id", "started_at"):
            data.pop(key)
        return data

    def write(self) -> Path:
        path = self.directory / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        data["out_dir"] = Path(data["out_dir"])
        data["codebook_versions"] = [CodebookVersion(**v) for v in data.get("codebook_versions", [])]
        return cls(**data)


# ==================== REGISTRY ====================

class RunRecord(Base):
    """One executed command in the run registry."""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True, doc="Unique record ID")
    run_id = Column(String(32), nullable=False, unique=True, index=True, doc="Manifest run ID")
    command = Column(String, nullable=False, doc="Subcommand name")
    status = Column(String, nullable=False, doc="ok, failed or running")
    error = Column(Text, nullable=False, default="", doc="Error summary for failed runs")
    out_dir = Column(String, nullable=False, doc="Run directory")
    config_json = Column(Text, nullable=False, doc="Resolved experiment config")
    metrics_json = Column(Text, nullable=False, doc="Metric outputs")
    total_seconds = Column(Float, nullable=True, doc="Wall-clock duration")
    created_at = Column(DateTime(timezone=True), server_default=func.now(), nullable=False, doc="Record timestamp")

    codebook_versions = relationship(
        "CodebookVersionRecord", back_populates="run", cascade="all, delete-orphan",
        order_by="CodebookVersionRecord.version",
    )

    def __repr__(self) -> str:
        return f"<RunRecord(run_id={self.run_id}, command='{self.command}', status={self.status})>"


class CodebookVersionRecord(Base):
    """Codebook snapshot committed during a run."""
    __tablename__ = "codebook_versions"

    id = Column(Integer, primary_key=True, autoincrement=True, doc="Unique record ID")
    run_pk = Column(Integer, ForeignKey("runs.id"), nullable=False, index=True, doc="Owning run")
    version = Column(Integer, nullable=False, doc="Codebook version")
    iteration = Column(Integer, nullable=False, doc="Training iteration of the commit")
    quantization_error = Column(Float, nullable=False, doc="Error on the refresh stream")

    run = relationship("RunRecord", back_populates="codebook_versions")

    def __repr__(self) -> str:
        return f"<CodebookVersionRecord(version={self.version}, iteration={self.iteration})>"
