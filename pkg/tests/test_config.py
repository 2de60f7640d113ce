import pytest
import json
import os
import tempfile
from pathlib import Path
from unittest.mock import patch

from stancealign.config import (
    RunConfig,
    expand_run_matrix,
    load_config_file,
    load_run_matrix,
    normalize_method,
    parse_seeds,
    resolve_config,
    results_root,
    worker_count,
)
from stancealign.errors import ConfigError

BASE = {"dataset": "synthetic:smartvote", "method": "sft+grpo"}

MATRIX_TOML = """
[defaults]
profile = "toy"
seed = 4

[[runs]]
dataset = "synthetic:smartvote"
methods = ["majority", "icl", "SFT+GRPO"]

[[runs]]
dataset = "synthetic:ANES"
scheme = "aggressive"
methods = ["grpo"]

[runs.grpo]
steps = 120
"""


class TestResolveConfig:
    def test_toy_profile_defaults(self):
        config = resolve_config("toy", None, dict(BASE, seed=3))

        assert config.profile == "toy"
        assert config.backend == "toy-tabular"
        assert config.grpo.steps == 500
        assert config.grpo.lr == 0.5
        assert config.grpo.seed == 3
        assert config.sft.seed == 3
        assert config.trains

    def test_flags_override_file_override_profile(self):
        file_values = dict(BASE, seed=1, grpo={"steps": 300})

        config = resolve_config("toy", file_values, {"seed": 2, "temperature": None})

        assert config.seed == 2
        assert config.grpo.steps == 300
        assert config.grpo.group_size == 4
        assert config.temperature == 1.0

    def test_full_profile(self):
        config = resolve_config("full", None, BASE)

        assert config.backend == "socket"
        assert config.grpo.lr == 5e-6
        assert config.sft.lr == 5e-5

    def test_method_normalized(self):
        assert resolve_config("toy", None, dict(BASE, method="SFT + GRPO")).method == "sft+grpo"
        assert normalize_method(" ICL ") == "icl"

    @pytest.mark.parametrize("flags", [
        dict(BASE, method="dpo"),
        dict(BASE, colour="blue"),
        dict(BASE, grpo={"stepz": 3}),
        dict(BASE, grpo={"group_size": 1}),
        dict(BASE, bias="radical"),
        dict(BASE, train_fraction=0.0),
        dict(BASE, eval_seeds=[1, 2]),
        {"dataset": "synthetic:smartvote"},
    ])
    def test_invalid(self, flags):
        with pytest.raises(ConfigError):
            resolve_config("toy", None, flags)

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            resolve_config("huge", None, BASE)


class TestRunConfig:
    def test_hash_is_stable(self):
        first = resolve_config("toy", None, BASE)
        second = resolve_config("toy", None, dict(BASE, context_limit=None))

        assert first.config_hash() == second.config_hash()
        assert len(first.config_hash()) == 64

    def test_hash_tracks_values(self):
        config = resolve_config("toy", None, BASE)

        assert config.with_overrides(seed=1).config_hash() != config.config_hash()
        assert config.with_overrides(bias="progressive").config_hash() != config.config_hash()

    def test_evaluation_seeds(self):
        config = resolve_config("toy", None, dict(BASE, seed=2))

        assert config.seeds == [2001, 2002, 2003, 2004, 2005, 2006, 2007, 2008]
        custom = resolve_config("toy", None, dict(BASE, n_runs=2, eval_seeds=[7, 9]))
        assert custom.seeds == [7, 9]

    def test_to_json_is_serializable(self):
        config = resolve_config("toy", None, dict(BASE, units=["ch-001"]))
        data = json.loads(json.dumps(config.to_json()))

        assert data["units"] == ["ch-001"]
        assert data["reward"]["alpha_format"] == 0.25
        assert data["model"] == "toy-tabular"

    def test_from_mapping_requires_dataset_and_method(self):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"method": "icl"})


class TestRunMatrix:
    def test_expand(self):
        data = {
            "defaults": {"seed": 4},
            "runs": [
                {"dataset": "synthetic:smartvote", "methods": ["majority", "icl", "SFT+GRPO"]},
                {"dataset": "synthetic:ANES", "scheme": "aggressive", "methods": ["grpo"], "grpo": {"steps": 120}},
            ],
        }

        configs = expand_run_matrix(data)

        assert [c.method for c in configs] == ["majority", "icl", "sft+grpo", "grpo"]
        assert all(c.seed == 4 for c in configs)
        assert configs[3].scheme == "aggressive"
        assert configs[3].grpo.steps == 120
        assert configs[2].grpo.steps == 500

    def test_single_method_entry(self):
        configs = expand_run_matrix({"runs": [dict(BASE)]})

        assert [c.method for c in configs] == ["sft+grpo"]

    def test_no_runs(self):
        with pytest.raises(ConfigError):
            expand_run_matrix({"defaults": {"seed": 1}})

    def test_load_toml(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "experiments.toml"
            path.write_text(MATRIX_TOML, encoding="utf-8")

            configs = load_run_matrix(path)

        assert len(configs) == 4
        assert configs[-1].dataset == "synthetic:ANES"
        assert configs[-1].grpo.steps == 120


class TestConfigFiles:
    def test_json_file(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "run.json"
            path.write_text(json.dumps({"grpo": {"steps": 10, "warmup_steps": 1}}), encoding="utf-8")

            assert load_config_file(path) == {"grpo": {"steps": 10, "warmup_steps": 1}}

    def test_missing_file(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(ConfigError):
                load_config_file(Path(temp_dir) / "absent.toml")

    def test_malformed_toml(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "bad.toml"
            path.write_text("[defaults\nseed = ", encoding="utf-8")

            with pytest.raises(ConfigError):
                load_config_file(path)


class TestEnvironment:
    def test_results_root(self):
        with patch.dict(os.environ, {'STANCEALIGN_RESULTS_ROOT': '/tmp/stancealign-results'}):
            assert results_root() == Path('/tmp/stancealign-results')
        with patch.dict(os.environ, {}, clear=True):
            assert results_root() == Path("results")
        assert results_root("elsewhere") == Path("elsewhere")

    def test_worker_count(self):
        with patch.dict(os.environ, {'STANCEALIGN_WORKERS': '3'}):
            assert worker_count() == 3
            assert worker_count(5) == 5
        with patch.dict(os.environ, {'STANCEALIGN_WORKERS': 'many'}):
            with pytest.raises(ConfigError):
                worker_count()

    def test_parse_seeds(self):
        assert parse_seeds("1,2,3") == (1, 2, 3)
        assert parse_seeds(None) == ()
        with pytest.raises(ConfigError):
            parse_seeds("1,x")
