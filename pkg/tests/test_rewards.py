import pytest

from stancealign.errors import ConfigError
from stancealign.rewards import (
    RewardWeights,
    correctness_reward,
    format_reward,
    length_reward,
    total_reward,
)
from stancealign.schema import parse, render
from stancealign.stances import BINARY, Stance


def words(n):
    return " ".join(["word"] * n)


class TestSubRewards:
    def test_format_reward(self):
        assert format_reward(parse(render("x", Stance.YES))) == 4
        assert format_reward(parse("")) == 0
        assert format_reward(parse("<reasoning>x</reasoning><answer>A")) == 3

    def test_length_reward(self):
        assert length_reward(100, 100) == 0.0
        assert length_reward(0, 100) == -100.0

    @pytest.mark.parametrize("k", [0, 1, 37, 100])
    def test_length_reward_symmetric(self, k):
        assert length_reward(100 + k, 100) == length_reward(100 - k, 100)

    def test_correctness_reward(self):
        assert correctness_reward(Stance.YES, Stance.YES) == 1
        assert correctness_reward(None, Stance.YES) == 0
        assert correctness_reward(Stance.NO, Stance.YES) == 0


class TestTotalReward:
    def test_maximum(self):
        completion = render(words(100), Stance.YES)
        breakdown = total_reward(completion, Stance.YES, RewardWeights())

        assert breakdown.r_format == 4
        assert breakdown.r_length == 0.0
        assert breakdown.r_correct == 1
        assert breakdown.total == 2.0

    def test_empty_completion(self):
        breakdown = total_reward("", Stance.NO, RewardWeights())

        assert breakdown.total == -1.0

    def test_wrong_stance_long_trace(self):
        completion = render(words(110), Stance.NO)
        breakdown = total_reward(completion, Stance.YES, RewardWeights())

        assert breakdown.r_length == -10.0
        assert breakdown.total == pytest.approx(0.9, abs=1e-12)

    def test_length_counts_reasoning_only(self):
        completion = render(words(5), Stance.NEUTRAL)
        counted = []

        def counter(text):
            counted.append(text)
            return len(text.split())

        breakdown = total_reward(completion, Stance.NEUTRAL, RewardWeights(target_length=5), token_counter=counter)

        assert counted == [words(5)]
        assert breakdown.r_length == 0.0

    def test_label_space_restricts_stance(self):
        completion = render(words(3), Stance.NEUTRAL)
        breakdown = total_reward(completion, Stance.NEUTRAL, RewardWeights(), label_space=BINARY)

        assert breakdown.r_correct == 0

    def test_length_weight_rescales_only_length(self):
        completion = render(words(40), Stance.YES)
        base = total_reward(completion, Stance.YES, RewardWeights())
        doubled = total_reward(completion, Stance.YES, RewardWeights(alpha_length=0.02))

        assert doubled.r_length == base.r_length
        assert doubled.total - base.total == pytest.approx(0.01 * base.r_length)

    def test_breakdown_json(self):
        breakdown = total_reward(render("x", Stance.YES), Stance.YES, RewardWeights(target_length=1))

        assert breakdown.to_json() == {"r_format": 4, "r_length": 0.0, "r_correct": 1, "total": 2.0}


class TestRewardWeights:
    def test_defaults(self):
        weights = RewardWeights()

        assert (weights.alpha_format, weights.alpha_length, weights.alpha_correct) == (0.25, 0.01, 1.0)
        assert weights.target_length == 100

    def test_invalid(self):
        with pytest.raises(ConfigError):
            RewardWeights(alpha_format=float("nan"))
        with pytest.raises(ConfigError):
            RewardWeights(target_length=0)
