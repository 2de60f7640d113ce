import math
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import ConfigError
from .schema import ParseResult, parse
from .stances import TERNARY, LabelSpace, Stance

TokenCounter = Callable[[str], int]

DEFAULT_TARGET_LENGTH = 100


def whitespace_token_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class RewardWeights:
    alpha_format: float = 0.25
    alpha_length: float = 0.01
    alpha_correct: float = 1.0
    target_length: int = DEFAULT_TARGET_LENGTH

    def __post_init__(self):
        for name in ("alpha_format", "alpha_length", "alpha_correct"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"Reward weight {name} must be finite")
        if self.target_length < 1:
            raise ConfigError(f"Target length must be >= 1, got {self.target_length}")


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: int
    r_length: float
    r_correct: int
    total: float

    def to_json(self) -> dict:
        return {
            "r_format": self.r_format,
            "r_length": self.r_length,
            "r_correct": self.r_correct,
            "total": self.total,
        }


def format_reward(result: ParseResult) -> int:
    return result.tag_count


def length_reward(trace_length: int, target_length: int) -> float:
    return -float(abs(trace_length - target_length))


def correctness_reward(predicted: Optional[Stance], truth: Stance) -> int:
    return int(predicted is not None and predicted == truth)


def total_reward(
    completion: str,
    truth: Stance,
    weights: RewardWeights,
    token_counter: TokenCounter = whitespace_token_count,
    label_space: LabelSpace = TERNARY,
    parsed: Optional[ParseResult] = None,
) -> RewardBreakdown:
    """Weighted sum of format, length and correctness rewards.

    The length term counts tokens of the reasoning body only.
    """
    result = parsed if parsed is not None else parse(completion, label_space)
    trace_length = token_counter(result.reasoning_body) if result.reasoning_body else 0
    r_format = format_reward(result)
    r_length = length_reward(trace_length, weights.target_length)
    r_correct = correctness_reward(result.stance, truth)
    total = weights.alpha_format * r_format + weights.alpha_length * r_length + weights.alpha_correct * r_correct
    return RewardBreakdown(r_format=r_format, r_length=r_length, r_correct=r_correct, total=total)
