"""Group-relative policy optimization over survey questions."""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, NumericError, PolicyContractError, SplitError, TrainingDivergedError
from .policies import Completion, PolicyContract, RlSample
from .prompts import prompt_for
from .rewards import RewardWeights, total_reward
from .splits import Split
from .surveys import Dataset, UnitProfile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrpoConfig:
    steps: int = 800
    batch_questions: int = 8
    group_size: int = 8
    temperature: float = 1.0
    lr: float = 5e-6
    warmup_steps: int = 80
    beta: float = 0.0
    clip_range: float = 0.2
    adv_epsilon: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ConfigError(f"Group size must be >= 2, got {self.group_size}")
        if not self.steps >= self.warmup_steps >= 0:
            raise ConfigError(f"Need steps >= warmup_steps >= 0, got {self.steps} and {self.warmup_steps}")
        if self.batch_questions < 1:
            raise ConfigError(f"batch_questions must be >= 1, got {self.batch_questions}")
        if not self.temperature > 0:
            raise ConfigError(f"Temperature must be > 0, got {self.temperature}")

    def to_json(self) -> dict:
        return asdict(self)


def cosine_lr(step: int, config) -> float:
    """Linear warm-up to ``config.lr`` then cosine decay to 0 at ``config.steps``."""
    if not 0 <= step <= config.steps:
        raise ConfigError(f"Step {step} outside schedule range [0, {config.steps}]")
    if config.warmup_steps and step < config.warmup_steps:
        return config.lr * step / config.warmup_steps
    span = config.steps - config.warmup_steps
    if span <= 0:
        return config.lr
    progress = (step - config.warmup_steps) / span
    return config.lr * (1.0 + math.cos(math.pi * progress)) / 2.0


def compute_advantages(rewards: Sequence[float], epsilon: float = 1e-4) -> List[float]:
    values = np.asarray(rewards, dtype=float)
    if len(values) < 2:
        raise ConfigError(f"A group needs at least 2 rewards, got {len(values)}")
    if not np.all(np.isfinite(values)):
        raise NumericError(f"Non-finite reward in group: {list(rewards)}")
    std = float(values.std())
    if std < epsilon:
        return [0.0] * len(values)
    return ((values - values.mean()) / std).tolist()


@dataclass
class GroupSample:
    question_id: str
    completions: List[Completion]
    rewards: List[float]
    advantages: List[float]

    def check(self, epsilon: float) -> None:
        rewards = np.asarray(self.rewards)
        advantages = np.asarray(self.advantages)
        if rewards.std() >= epsilon:
            ok = abs(advantages.mean()) <= 1e-9 and abs(advantages.std() - 1.0) <= 1e-6
        else:
            ok = bool(np.all(advantages == 0.0))
        if not ok:
            raise NumericError(f"Advantages for question {self.question_id} are not group-normalized")


@dataclass
class TrainLogEntry:
    step: int
    mean_reward: float
    mean_abs_advantage: float
    loss: float
    lr: float
    mean_correct: float = 0.0
    clip_fraction: float = 0.0


@dataclass
class TrainLog:
    entries: List[TrainLogEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: TrainLogEntry) -> None:
        self.entries.append(entry)

    @property
    def mean_rewards(self) -> List[float]:
        return [e.mean_reward for e in self.entries]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.entries)

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainLog":
        entries = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                entries.append(TrainLogEntry(**json.loads(line)))
        return cls(entries)


def checkpoint_path(root: Union[str, Path], unit_id: str, method: str, seed: int, step: int) -> Path:
    return Path(root) / unit_id / method / str(seed) / f"step{step}"


def grpo_train(
    policy: PolicyContract,
    dataset: Dataset,
    unit: UnitProfile,
    split: Split,
    reward_weights: RewardWeights,
    config: GrpoConfig,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    checkpoint_every: Optional[int] = None,
    method: str = "grpo",
) -> Tuple[PolicyContract, TrainLog]:
    train_ids = split.unit_train_ids(unit)
    if not train_ids:
        raise SplitError(f"Unit {unit.unit_id} has no answered training questions")
    prompts = {qid: prompt_for(dataset, dataset.question(qid), unit.country) for qid in train_ids}
    policy.snapshot_reference()
    rng = np.random.default_rng(config.seed)
    log = TrainLog()
    last_checkpoint: Optional[Path] = None

    for step in range(config.steps):
        lr = cosine_lr(step, config)
        drawn = rng.integers(len(train_ids), size=config.batch_questions)
        groups: List[GroupSample] = []
        batch: List[RlSample] = []
        correct = []
        for j, index in enumerate(drawn):
            qid = train_ids[int(index)]
            prompt = prompts[qid]
            seed = (config.seed * 1_000_003 + step * config.batch_questions + j) % (2 ** 32)
            completions = policy.sample(prompt, config.group_size, config.temperature, seed)
            if len(completions) != config.group_size:
                raise PolicyContractError(
                    f"Policy returned {len(completions)} completions for question {qid}, expected {config.group_size}"
                )
            rewards = []
            for completion in completions:
                breakdown = total_reward(
                    completion.text,
                    unit.responses[qid],
                    reward_weights,
                    token_counter=policy.count_tokens,
                    label_space=dataset.label_space,
                    parsed=completion.parse,
                )
                completion.reward = breakdown
                rewards.append(breakdown.total)
                correct.append(breakdown.r_correct)
            group = GroupSample(qid, completions, rewards, compute_advantages(rewards, config.adv_epsilon))
            group.check(config.adv_epsilon)
            groups.append(group)
            batch.extend(RlSample(prompt, c, a) for c, a in zip(completions, group.advantages))

        metrics = policy.rl_update(batch, config.clip_range, config.beta, lr)
        loss = float(metrics["loss"])
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"GRPO loss became {loss} at step {step} for unit {unit.unit_id}",
                last_checkpoint=last_checkpoint,
            )
        log.append(TrainLogEntry(
            step=step,
            mean_reward=float(np.mean([r for g in groups for r in g.rewards])),
            mean_abs_advantage=float(np.mean([abs(a) for g in groups for a in g.advantages])),
            loss=loss,
            lr=lr,
            mean_correct=float(np.mean(correct)),
            clip_fraction=float(metrics.get("clip_fraction", 0.0)),
        ))
        if checkpoint_dir is not None and checkpoint_every and (step + 1) % checkpoint_every == 0:
            last_checkpoint = checkpoint_path(checkpoint_dir, unit.unit_id, method, config.seed, step + 1)
            policy.save(last_checkpoint)
        if step % 50 == 0:
            logger.debug(
                "GRPO step %d unit %s: reward=%.4f loss=%.4f lr=%.3g",
                step, unit.unit_id, log.entries[-1].mean_reward, loss, lr,
            )
    return policy, log
