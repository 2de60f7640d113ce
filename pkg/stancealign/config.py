"""Run configuration: profiles, config files and the run-matrix format.

Values resolve as flags > config file > profile defaults.
"""
import copy
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import ConfigError
from .grpo import GrpoConfig
from .policies import BACKENDS
from .rewards import RewardWeights
from .sft import BIAS_TAGS, SftConfig
from .splits import STRATEGIES
from .surveys import SCHEMES, SURVEYS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

METHODS = ("majority", "random", "icl", "sft", "grpo", "sft+grpo")
TRAINED_METHODS = ("sft", "grpo", "sft+grpo")
TRAIN_FRACTIONS = (0.10, 0.25, 0.50, 0.75, 1.00)
N_EVAL_RUNS = 8

PROFILES: Dict[str, Dict[str, Any]] = {
    "toy": {
        "backend": "toy-tabular",
        "sft": {"steps": 500, "batch_size": 4, "lr": 0.5, "warmup_steps": 80, "max_grad_norm": 1.0},
        "grpo": {"steps": 500, "batch_questions": 4, "group_size": 4, "lr": 0.5, "warmup_steps": 80},
    },
    "full": {
        "backend": "socket",
        "sft": {"steps": 800, "batch_size": 8, "lr": 5e-5, "warmup_steps": 80, "max_grad_norm": 1.0},
        "grpo": {"steps": 800, "batch_questions": 8, "group_size": 8, "lr": 5e-6, "warmup_steps": 80},
    },
}

DEFAULT_SPLITS = {"smartvote": "topic_stratified", "WoM": "fixed_external", "ANES": "random"}
DEFAULT_TEST_SIZES = {"ANES": 12}


def results_root(root: Optional[Union[str, Path]] = None) -> Path:
    return Path(root or os.getenv("STANCEALIGN_RESULTS_ROOT") or "results")


def worker_count(workers: Optional[int] = None) -> int:
    value = workers or os.getenv("STANCEALIGN_WORKERS") or 1
    try:
        value = int(value)
    except ValueError:
        raise ConfigError(f"STANCEALIGN_WORKERS must be an integer, got {value!r}")
    if value < 1:
        raise ConfigError(f"Worker count must be >= 1, got {value}")
    return value


def normalize_method(method: str) -> str:
    name = str(method).strip().lower().replace(" ", "")
    if name not in METHODS:
        raise ConfigError(f"Unknown method {method!r}; choose from {', '.join(METHODS)}")
    return name


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    method: str
    survey: Optional[str] = None
    scheme: Optional[str] = None
    backend: str = "toy-tabular"
    profile: str = "toy"
    model: str = ""
    seed: int = 0
    eval_seeds: Tuple[int, ...] = ()
    n_runs: int = N_EVAL_RUNS
    temperature: float = 1.0
    bias: str = "default"
    train_fraction: float = 1.0
    split: Optional[str] = None
    split_seed: int = 0
    n_test: Optional[int] = None
    context_limit: Optional[int] = None
    units: Tuple[str, ...] = ()
    arguments: Optional[str] = None
    invert: bool = False
    reward: RewardWeights = field(default_factory=RewardWeights)
    sft: SftConfig = field(default_factory=SftConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.survey is not None and self.survey not in SURVEYS:
            raise ConfigError(f"Unknown survey {self.survey!r}")
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ConfigError(f"Unknown recoding scheme {self.scheme!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"Unknown backend {self.backend!r}; choose from {', '.join(BACKENDS)}")
        if self.bias not in BIAS_TAGS:
            raise ConfigError(f"Unknown bias tag {self.bias!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.split is not None and self.split not in STRATEGIES:
            raise ConfigError(f"Unknown split strategy {self.split!r}")
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.eval_seeds and len(self.eval_seeds) != self.n_runs:
            raise ConfigError(f"Expected {self.n_runs} evaluation seeds, got {len(self.eval_seeds)}")

    @property
    def trains(self) -> bool:
        return self.method in TRAINED_METHODS

    @property
    def seeds(self) -> List[int]:
        if self.eval_seeds:
            return list(self.eval_seeds)
        return [self.seed * 1000 + r for r in range(1, self.n_runs + 1)]

    @property
    def model_name(self) -> str:
        return self.model or self.backend

    def to_json(self) -> Dict[str, Any]:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "survey": self.survey,
            "scheme": self.scheme,
            "backend": self.backend,
            "profile": self.profile,
            "model": self.model_name,
            "seed": self.seed,
            "eval_seeds": self.seeds,
            "n_runs": self.n_runs,
            "temperature": self.temperature,
            "bias": self.bias,
            "train_fraction": self.train_fraction,
            "split": self.split,
            "split_seed": self.split_seed,
            "n_test": self.n_test,
            "context_limit": self.context_limit,
            "units": list(self.units),
            "arguments": self.arguments,
            "invert": self.invert,
            "reward": {
                "alpha_format": self.reward.alpha_format,
                "alpha_length": self.reward.alpha_length,
                "alpha_correct": self.reward.alpha_correct,
                "target_length": self.reward.target_length,
            },
            "sft": self.sft.to_json(),
            "grpo": self.grpo.to_json(),
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, **changes: Any) -> "RunConfig":
        return replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "RunConfig":
        values = dict(values)
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        if "dataset" not in values or "method" not in values:
            raise ConfigError("A run needs both 'dataset' and 'method'")
        seed = int(values.get("seed", 0))
        try:
            reward = RewardWeights(**dict(values.pop("reward", {}) or {}))
            sft = SftConfig(**dict({"seed": seed}, **dict(values.pop("sft", {}) or {})))
            grpo = GrpoConfig(**dict({"seed": seed}, **dict(values.pop("grpo", {}) or {})))
        except TypeError as e:
            raise ConfigError(f"Bad training section: {e}")
        values["method"] = normalize_method(values["method"])
        for key in ("eval_seeds", "units"):
            if key in values:
                values[key] = tuple(values[key] or ())
        if values.get("model") is None:
            values.pop("model", None)
        return cls(reward=reward, sft=sft, grpo=grpo, **values)


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}")


def resolve_config(
    profile: str = "toy",
    file_values: Optional[Mapping[str, Any]] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"Unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    merged = deep_merge(PROFILES[profile], file_values or {})
    merged = deep_merge(merged, flag_values or {})
    merged["profile"] = profile
    return RunConfig.from_mapping(merged)


def expand_run_matrix(
    data: Mapping[str, Any],
    profile: Optional[str] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
) -> List[RunConfig]:
    """One RunConfig per (run entry, method) from a ``[defaults]`` + ``[[runs]]`` document."""
    defaults = dict(data.get("defaults") or {})
    runs = data.get("runs")
    if not runs:
        raise ConfigError("Run matrix has no [[runs]] entries")
    configs = []
    for index, run in enumerate(runs):
        entry = deep_merge(defaults, run)
        methods = entry.pop("methods", None) or [entry.pop("method", None)]
        entry.pop("method", None)
        run_profile = profile or entry.pop("profile", "toy")
        entry.pop("profile", None)
        for method in methods:
            if method is None:
                raise ConfigError(f"Run entry #{index} names no method")
            configs.append(resolve_config(
                run_profile, dict(entry, method=normalize_method(method)), flag_values,
            ))
    return configs


def load_run_matrix(path: Union[str, Path], profile: Optional[str] = None) -> List[RunConfig]:
    configs = expand_run_matrix(load_config_file(path), profile)
    logger.info("Loaded %d matrix cells from %s", len(configs), path)
    return configs


def default_split(survey: str) -> str:
    return DEFAULT_SPLITS[survey]


def default_test_size(survey: str) -> Optional[int]:
    return DEFAULT_TEST_SIZES.get(survey)


def parse_seeds(text: Optional[str]) -> Sequence[int]:
    if not text:
        return ()
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise ConfigError(f"Seeds must be comma-separated integers, got {text!r}")
