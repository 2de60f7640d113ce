import pytest
import math
import statistics
import tempfile
from pathlib import Path

import numpy as np

from stancealign.config import PROFILES
from stancealign.errors import ConfigError, NumericError, PolicyContractError, SplitError, TrainingDivergedError
from stancealign.grpo import (
    GroupSample,
    GrpoConfig,
    TrainLog,
    checkpoint_path,
    compute_advantages,
    cosine_lr,
    grpo_train,
)
from stancealign.policies import ToyTabularPolicy
from stancealign.prompts import prompt_for
from stancealign.rewards import RewardWeights
from stancealign.splits import Split
from stancealign.synthetic import persona

TOY = dict(batch_questions=8, group_size=8, lr=0.5)


def persona_setup():
    dataset = persona()
    split = Split(train_ids=tuple(dataset.question_ids), test_ids=(), strategy="random", seed=0)
    return dataset, dataset.unit("persona"), split


def params_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


class TestComputeAdvantages:
    def test_zero_variance(self):
        assert compute_advantages([2.0, 2.0, 2.0, 2.0]) == [0.0, 0.0, 0.0, 0.0]

    def test_two_points(self):
        assert compute_advantages([1.0, 0.0]) == [1.0, -1.0]

    def test_matches_direct_standardization(self):
        rewards = [2.0, 0.9, 0.9, -1.0]
        mean, std = statistics.fmean(rewards), statistics.pstdev(rewards)

        advantages = compute_advantages(rewards)

        for value, reward in zip(advantages, rewards):
            assert abs(value - (reward - mean) / std) <= 1e-9

    def test_random_groups_are_normalized(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            size = int(rng.integers(2, 17))
            rewards = rng.normal(0.0, rng.uniform(0.01, 3.0), size=size).tolist()
            advantages = np.asarray(compute_advantages(rewards))

            if np.std(rewards) < 1e-4:
                assert np.all(advantages == 0.0)
            else:
                assert abs(advantages.mean()) <= 1e-9
                assert abs(advantages.std() - 1.0) <= 1e-6

    def test_below_epsilon_is_zero(self):
        assert compute_advantages([1.0, 1.0 + 1e-6], epsilon=1e-4) == [0.0, 0.0]

    def test_single_reward(self):
        with pytest.raises(ConfigError):
            compute_advantages([1.0])

    def test_non_finite_reward(self):
        with pytest.raises(NumericError):
            compute_advantages([1.0, float("inf")])


class TestGroupSample:
    def test_check_rejects_unnormalized(self):
        group = GroupSample("q1", [], [1.0, 0.0], [2.0, -2.0])

        with pytest.raises(NumericError):
            group.check(1e-4)

    def test_check_accepts_zero_variance(self):
        GroupSample("q1", [], [1.0, 1.0], [0.0, 0.0]).check(1e-4)


class TestCosineLr:
    config = GrpoConfig(steps=100, warmup_steps=20, lr=1.0)

    def test_warmup_junction(self):
        assert cosine_lr(20, self.config) == 1.0
        assert cosine_lr(10, self.config) == 0.5
        assert cosine_lr(0, self.config) == 0.0

    def test_endpoint(self):
        assert cosine_lr(100, self.config) == 0.0

    def test_midpoint(self):
        assert cosine_lr(60, self.config) == pytest.approx(0.5)

    def test_without_warmup(self):
        assert cosine_lr(0, GrpoConfig(steps=10, warmup_steps=0, lr=2.0)) == 2.0

    @pytest.mark.parametrize("step", [-1, 101])
    def test_out_of_range(self, step):
        with pytest.raises(ConfigError):
            cosine_lr(step, self.config)


class TestGrpoConfig:
    def test_defaults(self):
        config = GrpoConfig()

        assert (config.steps, config.batch_questions, config.group_size) == (800, 8, 8)
        assert (config.lr, config.warmup_steps, config.beta, config.clip_range) == (5e-6, 80, 0.0, 0.2)

    @pytest.mark.parametrize("kwargs", [
        {"group_size": 1},
        {"steps": 10, "warmup_steps": 20},
        {"warmup_steps": -1},
        {"temperature": 0.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            GrpoConfig(**kwargs)


class TestGrpoTrain:
    def test_persona_converges(self):
        dataset, unit, split = persona_setup()
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids)
        config = GrpoConfig(seed=0, **PROFILES["toy"]["grpo"])

        policy, log = grpo_train(policy, dataset, unit, split, RewardWeights(), config)

        greedy = [
            policy.greedy_stance(prompt_for(dataset, dataset.question(qid))) is unit.responses[qid]
            for qid in split.train_ids
        ]
        assert sum(greedy) / len(greedy) >= 0.95
        assert np.mean(log.mean_rewards[-50:]) > np.mean(log.mean_rewards[:50])

    def test_zero_steps(self):
        dataset, unit, split = persona_setup()
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids, init_scale=1.0, seed=1)
        before = {k: v.copy() for k, v in policy.params.items()}

        policy, log = grpo_train(
            policy, dataset, unit, split, RewardWeights(), GrpoConfig(steps=0, warmup_steps=0, **TOY),
        )

        assert len(log) == 0
        assert params_equal(policy.params, before)

    def test_constant_rewards_leave_parameters(self):
        dataset, unit, split = persona_setup()
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids, init_scale=1.0, seed=2)
        before = {k: v.copy() for k, v in policy.params.items()}
        weights = RewardWeights(alpha_format=0.0, alpha_length=0.0, alpha_correct=0.0)

        policy, log = grpo_train(
            policy, dataset, unit, split, weights, GrpoConfig(steps=20, warmup_steps=2, **TOY),
        )

        assert params_equal(policy.params, before)
        assert all(e.mean_abs_advantage == 0.0 for e in log.entries)

    def test_same_seed_same_log(self):
        dataset, unit, split = persona_setup()
        config = GrpoConfig(steps=30, warmup_steps=3, seed=4, **TOY)

        logs = []
        for _ in range(2):
            policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids)
            logs.append(grpo_train(policy, dataset, unit, split, RewardWeights(), config)[1].to_jsonl())

        assert logs[0] == logs[1]

    def test_log_fields_and_schedule(self):
        dataset, unit, split = persona_setup()
        config = GrpoConfig(steps=10, warmup_steps=2, **TOY)
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids)

        _, log = grpo_train(policy, dataset, unit, split, RewardWeights(), config)

        assert [e.step for e in log.entries] == list(range(10))
        assert [e.lr for e in log.entries] == [cosine_lr(s, config) for s in range(10)]

    def test_no_training_questions(self):
        dataset, unit, _ = persona_setup()
        split = Split(train_ids=(), test_ids=tuple(dataset.question_ids), strategy="random", seed=0)
        policy = ToyTabularPolicy(dataset.label_space)

        with pytest.raises(SplitError):
            grpo_train(policy, dataset, unit, split, RewardWeights(), GrpoConfig(steps=1, warmup_steps=0))

    def test_short_group_violates_contract(self):
        class ShortPolicy(ToyTabularPolicy):
            def sample(self, prompt, n, temperature, seed):
                return super().sample(prompt, n, temperature, seed)[:1]

        dataset, unit, split = persona_setup()

        with pytest.raises(PolicyContractError):
            grpo_train(
                ShortPolicy(dataset.label_space), dataset, unit, split, RewardWeights(),
                GrpoConfig(steps=1, warmup_steps=0, group_size=2),
            )

    def test_divergence_reports_last_checkpoint(self):
        class DivergingPolicy(ToyTabularPolicy):
            updates = 0

            def rl_update(self, batch, clip_range, kl_coefficient, learning_rate):
                metrics = super().rl_update(batch, clip_range, kl_coefficient, learning_rate)
                self.updates += 1
                if self.updates == 3:
                    metrics["loss"] = math.nan
                return metrics

        dataset, unit, split = persona_setup()
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(TrainingDivergedError) as exc_info:
                grpo_train(
                    DivergingPolicy(dataset.label_space, dataset.question_ids), dataset, unit, split,
                    RewardWeights(), GrpoConfig(steps=5, warmup_steps=0, seed=3, **TOY),
                    checkpoint_dir=temp_dir, checkpoint_every=1,
                )

            assert exc_info.value.last_checkpoint == checkpoint_path(temp_dir, "persona", "grpo", 3, 2)

    def test_checkpoints_written(self):
        dataset, unit, split = persona_setup()
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids)
        with tempfile.TemporaryDirectory() as temp_dir:
            grpo_train(
                policy, dataset, unit, split, RewardWeights(), GrpoConfig(steps=4, warmup_steps=0, seed=1, **TOY),
                checkpoint_dir=temp_dir, checkpoint_every=2, method="sft+grpo",
            )

            root = Path(temp_dir) / "persona" / "sft+grpo" / "1"
            assert (root / "step2").is_file()
            assert (root / "step4").is_file()
            assert not (root / "step1").exists()


class TestTrainLog:
    def test_save_and_load(self):
        dataset, unit, split = persona_setup()
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids)
        _, log = grpo_train(
            policy, dataset, unit, split, RewardWeights(), GrpoConfig(steps=5, warmup_steps=1, **TOY),
        )
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "logs" / "persona.jsonl"
            log.save(path)
            loaded = TrainLog.load(path)

        assert loaded.to_jsonl() == log.to_jsonl()
        assert loaded.mean_rewards == log.mean_rewards
