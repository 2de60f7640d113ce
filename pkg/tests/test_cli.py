import json
import tempfile
from pathlib import Path
from unittest.mock import Mock, patch

import pandas as pd

from stancealign.cli import COMMANDS, main
from stancealign.splits import load_split
from stancealign.surveys import load_dataset

MATRIX_TOML = """
[defaults]
profile = "toy"
n_runs = 2
units = ["ch-001", "ch-002"]

[[runs]]
dataset = "synthetic:smartvote"
methods = ["majority", "icl"]
"""


def read_manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


class TestExitCodes:
    def test_unknown_flag(self):
        assert main(["ingest", "--input", "synthetic:smartvote", "--colour", "blue", "--out", "x"]) == 1

    def test_missing_command(self):
        assert main([]) == 1

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "analyze-pca" in capsys.readouterr().out

    def test_invalid_input(self, capsys):
        with tempfile.TemporaryDirectory() as temp_dir:
            code = main(["ingest", "--input", str(Path(temp_dir) / "absent.json"), "--out", temp_dir])

        assert code == 1
        assert "ERROR:" in capsys.readouterr().err

    def test_runtime_failure(self, capsys):
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch.dict(COMMANDS, {"ingest": Mock(side_effect=RuntimeError("disk full"))}):
                code = main(["ingest", "--input", "synthetic:smartvote", "--out", temp_dir])

        assert code == 2
        assert "RuntimeError: disk full" in capsys.readouterr().err


class TestDataCommands:
    def test_ingest_writes_dataset_and_manifest(self, capsys):
        with tempfile.TemporaryDirectory() as temp_dir:
            out = Path(temp_dir)

            assert main(["ingest", "--input", "synthetic:smartvote", "--out", temp_dir]) == 0

            dataset = load_dataset(out / "dataset.json")
            manifest = read_manifest(out)

        assert len(dataset.units) == 24
        assert manifest["command"] == "ingest"
        assert manifest["outputs"] == ["dataset.json"]
        assert manifest["config"] is None
        assert "pandas" in manifest["versions"]
        assert capsys.readouterr().out.strip().endswith("dataset.json")

    def test_recode_anes(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            out = Path(temp_dir)

            assert main(["recode", "--input", "synthetic:ANES", "--survey", "anes", "--scheme", "aggressive",
                         "--out", temp_dir]) == 0

            dataset = load_dataset(out / "dataset.aggressive.json")
            manifest = read_manifest(out)

        assert dataset.recoding_scheme == "aggressive"
        assert manifest["inputs"] == {"input": "synthetic:ANES", "scheme": "aggressive"}

    def test_split_defaults(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            out = Path(temp_dir)

            assert main(["split", "--input", "synthetic:ANES", "--seed", "3", "--out", temp_dir]) == 0

            split = load_split(out / "split.json")

        assert split.strategy == "random"
        assert split.seed == 3
        assert len(split.test_ids) == 12

    def test_analyze_pca(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            out = Path(temp_dir)

            assert main(["analyze-pca", "--input", "synthetic:smartvote", "--out", temp_dir]) == 0

            positions = pd.read_csv(out / "positions.csv")
            space = json.loads((out / "space.json").read_text(encoding="utf-8"))

        assert len(positions) == 24
        assert len(space["components"]) == 2

    def test_analyze_pca_ternary(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["analyze-pca", "--input", "synthetic:ANES", "--out", temp_dir]) == 1

    def test_sft_build_stub(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            out = Path(temp_dir)

            assert main(["sft-build", "--input", "synthetic:smartvote", "--bias", "progressive",
                         "--out", temp_dir]) == 0

            lines = (out / "progressive.jsonl").read_text(encoding="utf-8").splitlines()
            manifest = read_manifest(out)

        assert lines
        assert {json.loads(line)["bias_tag"] for line in lines} == {"progressive"}
        assert manifest["inputs"]["uncovered"] == []


class TestTrainAndEvaluate:
    def test_train_then_evaluate_checkpoint(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            root = Path(temp_dir)
            config = root / "run.json"
            config.write_text(json.dumps({"grpo": {"steps": 10, "warmup_steps": 1}, "n_runs": 2}), encoding="utf-8")
            run = ["--dataset", "synthetic:smartvote", "--method", "grpo", "--unit", "ch-001", "--config", str(config)]

            assert main(["train", *run, "--out", str(root / "train")]) == 0
            assert (root / "train" / "checkpoints" / "ch-001" / "grpo" / "0" / "final").exists()
            assert (root / "train" / "train_logs" / "ch-001.jsonl").exists()

            code = main(["evaluate", *run, "--checkpoint", str(root / "train" / "checkpoints"),
                         "--results", str(root / "results"), "--out", str(root / "eval")])
            scores = pd.read_csv(root / "eval" / "scores.csv")
            manifest = read_manifest(root / "eval")
            stored = (root / "results" / "results.jsonl").read_text(encoding="utf-8").splitlines()

        assert code == 0
        assert len(scores) == 2
        assert set(scores["unit_id"]) == {"ch-001"}
        assert len(stored) == 2
        assert manifest["config"]["grpo"]["steps"] == 10
        assert len(manifest["config_hash"]) == 64

    def test_evaluate_baseline(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            out = Path(temp_dir)

            code = main(["evaluate", "--dataset", "synthetic:smartvote", "--method", "majority",
                         "--unit", "ch-003", "--n-runs", "3", "--out", temp_dir])
            scores = pd.read_csv(out / "scores.csv")

        assert code == 0
        assert list(scores["run_index"]) == [1, 2, 3]

    def test_trained_method_needs_checkpoint(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["evaluate", "--dataset", "synthetic:smartvote", "--method", "sft+grpo",
                         "--out", temp_dir]) == 1

    def test_baseline_cannot_train(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["train", "--dataset", "synthetic:smartvote", "--method", "icl", "--out", temp_dir]) == 1

    def test_unknown_unit(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["evaluate", "--dataset", "synthetic:smartvote", "--method", "random",
                         "--unit", "ch-999", "--out", temp_dir]) == 1


class TestExperimentAndReport:
    def test_matrix_then_report(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            root = Path(temp_dir)
            matrix = root / "experiments.toml"
            matrix.write_text(MATRIX_TOML, encoding="utf-8")

            assert main(["experiment", "matrix", "--matrix", str(matrix), "--workers", "2",
                         "--out", str(root / "matrix")]) == 0
            manifest = read_manifest(root / "matrix")

            assert main(["report", "--results", str(root / "matrix" / "results"), "--layout", "table3",
                         "--out", str(root / "report")]) == 0
            table = pd.read_csv(root / "report" / "table3.csv")

        assert manifest["inputs"]["completed"] == 4
        assert manifest["inputs"]["failed"] == 0
        computed = table[table["source"] == "computed"]
        assert list(computed["method"]) == ["majority", "icl"]
        assert set(computed["ANES"]) == {"missing"}

    def test_matrix_needs_file(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["experiment", "matrix", "--out", temp_dir]) == 1

    def test_followup_needs_dataset(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["experiment", "inversion", "--out", temp_dir]) == 1

    def test_report_on_empty_store(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            assert main(["report", "--results", temp_dir, "--layout", "fig3", "--out", temp_dir]) == 1
