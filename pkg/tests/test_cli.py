"""Subcommands end to end through the middleware chain."""

import json

import numpy as np
import pytest

from core.cli import build_cli
from modules.datasets.utils import load_fvecs, load_ivecs, write_fvecs

MODULES = ["modules.datasets", "modules.vq", "modules.retrieval", "modules.experiments"]


@pytest.fixture
def cli():
    return build_cli(MODULES)


@pytest.fixture
def config_file(tmp_path, small_config):
    path = tmp_path / "exp.env"
    small_config.to_file(path)
    return path


def manifest(directory):
    return json.loads((directory / "manifest.json").read_text())


class TestModules:
    def test_all_modules_load(self, cli):
        assert cli.get_loaded_modules() == MODULES

    def test_broken_module_is_skipped(self):
        cli = build_cli(["modules.vq", "modules.does_not_exist"])
        assert cli.get_loaded_modules() == ["modules.vq"]

    def test_no_command(self, cli):
        assert cli.run([]) == 1


class TestSynth:
    def test_fvecs_with_labels(self, cli, config_file, small_config):
        assert cli.run(["synth", "--config", str(config_file)]) == 0
        out = small_config.output_path
        assert load_fvecs(out / "synthetic.fvecs").shape == (160, 8)
        assert load_ivecs(out / "synthetic_labels.ivecs").shape == (160, 1)
        assert set(manifest(out)["artifacts"]) == {"synthetic.fvecs", "synthetic_labels.ivecs"}

    def test_csv(self, cli, config_file, small_config):
        assert cli.run(["synth", "--config", str(config_file), "--format", "csv"]) == 0
        assert (small_config.output_path / "synthetic.csv").is_file()


class TestCodebookCommands:
    def test_train_codebook_then_encode(self, cli, config_file, small_config, rng):
        out = small_config.output_path
        assert cli.run(["train-codebook", "--config", str(config_file)]) == 0
        curve = (out / "quant_error.csv").read_text().splitlines()
        assert curve[0] == "iteration,mean_error,error_m0,error_m1"
        errors = [float(line.split(",")[1]) for line in curve[1:]]
        assert all(b <= a for a, b in zip(errors, errors[1:]))

        vectors = write_fvecs(out / "in.fvecs", rng.normal(size=(9, 8)))
        assert cli.run(["encode", "--config", str(config_file), "--input", str(vectors)]) == 0
        codes = load_ivecs(out / "codes.ivecs")
        assert codes.shape == (9, 2) and codes.max() < 4

    def test_same_seed_same_codebook_file(self, cli, config_file, small_config):
        out = small_config.output_path
        cli.run(["train-codebook", "--config", str(config_file)])
        first = manifest(out)["artifacts"]["codebook.sqcb"]
        cli.run(["train-codebook", "--config", str(config_file)])
        assert manifest(out)["artifacts"]["codebook.sqcb"] == first

    def test_encode_without_codebook(self, cli, config_file, small_config, rng):
        vectors = write_fvecs(small_config.output_path / "in.fvecs", rng.normal(size=(2, 8)))
        assert cli.run(["encode", "--config", str(config_file), "--input", str(vectors)]) == 2


class TestSearch:
    def test_exact(self, cli, tmp_path):
        db = write_fvecs(tmp_path / "db.fvecs", np.array([[0.0], [1.0], [3.0]]))
        q = write_fvecs(tmp_path / "q.fvecs", np.array([[2.0]]))
        out = tmp_path / "r.csv"
        status = cli.run(["search", "--database", str(db), "--queries", str(q), "--exact",
                          "--limit", "2", "--output", str(out), "--out-dir", str(tmp_path / "run")])
        assert status == 0
        assert out.read_text().splitlines()[1:] == ["0,1,1,1.0", "0,2,2,1.0"]

    def test_adc_needs_codebook(self, cli, tmp_path):
        db = write_fvecs(tmp_path / "db.fvecs", np.ones((3, 4)))
        args = ["search", "--database", str(db), "--queries", str(db), "--out-dir", str(tmp_path / "run")]
        assert cli.run(args) == 2
        assert manifest(tmp_path / "run")["status"] == "failed"


class TestTrainEvalAblate:
    def test_train_is_byte_reproducible(self, cli, config_file, small_config):
        out = small_config.output_path
        files = ("train_log.csv", "alignment_histogram.csv", "codebook.sqcb", "checkpoint.sqnn")

        assert cli.run(["train", "--config", str(config_file), "--deterministic"]) == 0
        first = {name: (out / name).read_bytes() for name in files}
        first_manifest = manifest(out)

        assert cli.run(["train", "--config", str(config_file), "--deterministic"]) == 0
        for name in files:
            assert (out / name).read_bytes() == first[name], name
        second_manifest = manifest(out)
        for key in ("timings", "run_id", "started_at"):
            first_manifest.pop(key)
            second_manifest.pop(key)
        assert first_manifest == second_manifest

    def test_train_then_eval(self, cli, config_file, small_config):
        out = small_config.output_path
        assert cli.run(["train", "--config", str(config_file), "--mode", "plain"]) == 0
        assert manifest(out)["config"]["MODE"] == "plain"
        assert "final_loss" in manifest(out)["metrics"]

        assert cli.run(["eval", "--config", str(config_file)]) == 0
        assert (out / "map.csv").read_text().splitlines()[0] == "method,map,num_queries,retrieval_cutoff"
        assert {"map_adc", "map_l2"} <= set(manifest(out)["metrics"])

    def test_snap_log(self, cli, tmp_path, small_config):
        path = tmp_path / "snap.env"
        small_config.with_overrides(snap_log=True, epochs=1).to_file(path)
        assert cli.run(["train", "--config", str(path)]) == 0
        assert (small_config.output_path / "snap_log.csv").is_file()

    def test_eval_before_train_fails_with_manifest(self, cli, config_file, small_config):
        assert cli.run(["eval", "--config", str(config_file)]) == 2
        written = manifest(small_config.output_path)
        assert written["status"] == "failed"
        assert written["error"].startswith("ConfigError")

    def test_missing_config_still_writes_manifest(self, cli, tmp_path):
        out = tmp_path / "broken"
        assert cli.run(["train", "--config", str(tmp_path / "nope.env"), "--out-dir", str(out)]) == 2
        assert manifest(out)["status"] == "failed"

    def test_ablate_neighbors(self, cli, config_file, small_config):
        out = small_config.output_path
        args = ["ablate", "--config", str(config_file), "--sweep", "neighbors", "--values", "1,8,32", "--plot"]
        assert cli.run(args) == 0
        rows = (out / "sweep_neighbors.csv").read_text().splitlines()
        assert len(rows) == 4
        assert [r.split(",")[1] for r in rows[1:]] == ["1", "8", "32"]
        assert (out / "sweep_neighbors.png").is_file()
        assert (out / "alignment_neighbors.png").is_file()
        assert "map_adc[neighbors=32]" in manifest(out)["metrics"]

    def test_ablate_bad_values(self, cli, config_file):
        assert cli.run(["ablate", "--config", str(config_file), "--sweep", "neighbors", "--values", "x"]) == 2

    def test_registry_row_per_command(self, registry, config_file, small_config):
        from core.database import get_session
        from modules.experiments.models import RunRecord

        cli = build_cli(MODULES)
        cli.run(["synth", "--config", str(config_file)])
        cli.run(["eval", "--config", str(config_file)])
        with get_session() as session:
            rows = session.query(RunRecord).order_by(RunRecord.id).all()
            assert [(r.command, r.status) for r in rows] == [("synth", "ok"), ("eval", "failed")]
