"""Shared fixtures."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config import Config, ExperimentConfig  # noqa: E402
from core.database import close_database  # noqa: E402
from modules.embedding.service import init_network  # noqa: E402
from modules.vq.models import Codebook  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_codebook(rng):
    """M=2, K=4 codebook over 4-d vectors."""
    return Codebook(codewords=rng.normal(size=(2, 4, 2)).astype(np.float32))


@pytest.fixture
def tiny_net():
    return init_network(6, (8,), 4, seed=3)


@pytest.fixture(autouse=True)
def isolated_outputs(tmp_path, monkeypatch):
    """Point outputs at tmp_path and disable the run registry."""
    monkeypatch.setattr(Config, "OUTPUT_DIR", tmp_path / "runs")
    monkeypatch.setattr(Config, "RUNS_DATABASE_URL", "")
    close_database()
    yield
    close_database()


@pytest.fixture
def registry(tmp_path, monkeypatch):
    """Run registry in a throwaway SQLite file."""
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    monkeypatch.setattr(Config, "RUNS_DATABASE_URL", url)
    return url


@pytest.fixture
def small_config(tmp_path):
    """Few classes and points so a full train/eval takes seconds."""
    return ExperimentConfig(
        synth_classes=4,
        synth_per_class=40,
        synth_dim=8,
        synth_cluster_std=0.5,
        synth_center_scale=1.5,
        queries_per_class=5,
        train_per_class=30,
        hidden_dims=(16,),
        embed_dim=4,
        num_subspaces=2,
        num_codewords=4,
        kmeans_iters=5,
        neighbors=8,
        epochs=2,
        batch_size=16,
        triplets_per_anchor=2,
        precision_ks=(1, 5, 10),
        out_dir=str(tmp_path / "run"),
    )
