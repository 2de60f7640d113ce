import pytest

from stancealign.baselines import (
    IclResponder,
    MajorityResponder,
    RandomResponder,
    icl_build_prompt,
    majority_baseline,
    select_icl_demonstrations,
)
from stancealign.errors import MetricError
from stancealign.prompts import prompt_for
from stancealign.stances import Stance
from stancealign.synthetic import anes_like, persona

Y, N, U = Stance.YES, Stance.NO, Stance.NEUTRAL


class TestMajority:
    def test_modal_stance(self):
        assert majority_baseline([Y, N, N]) is N

    def test_ties_follow_canonical_order(self):
        assert majority_baseline([N, Y]) is Y
        assert majority_baseline([U, N]) is N
        assert majority_baseline([U, U, Y, Y, N]) is Y

    def test_empty(self):
        with pytest.raises(MetricError):
            majority_baseline([])

    def test_responder_for_unit(self):
        dataset = persona()
        responder = MajorityResponder.for_unit(dataset.unit("persona"), ["p01", "p02", "p03", "p04"])
        prompt = prompt_for(dataset, dataset.question("p05"))

        assert responder.greedy_stance(prompt) is Y
        assert {c.stance for c in responder.sample(prompt, 5, 1.0, seed=0)} == {Y}


class TestRandom:
    def test_stays_in_label_space(self):
        dataset = persona()
        prompt = prompt_for(dataset, dataset.question("p01"))

        completions = RandomResponder().sample(prompt, 200, 1.0, seed=0)

        assert {c.stance for c in completions} == {Y, N}

    def test_seeded(self):
        dataset = anes_like()
        prompt = prompt_for(dataset, dataset.question("an05"))

        first = [c.stance for c in RandomResponder().sample(prompt, 30, 1.0, seed=4)]
        second = [c.stance for c in RandomResponder().sample(prompt, 30, 1.0, seed=4)]

        assert first == second


class TestIcl:
    def test_same_topic_demonstrations(self):
        dataset = persona()
        unit = dataset.unit("persona")
        train_ids = [q for q in dataset.question_ids if q != "p02"]

        demos = select_icl_demonstrations(dataset, unit, dataset.question("p02"), train_ids)

        assert demos == ["p01"]

    def test_falls_back_to_all_answered(self):
        dataset = persona()
        unit = dataset.unit("persona")

        demos = select_icl_demonstrations(dataset, unit, dataset.question("p02"), ["p05", "p07"])

        assert demos == ["p05", "p07"]

    def test_context_limit_subset(self):
        dataset = anes_like()
        unit = dataset.units[0]
        train_ids = dataset.question_ids[10:]

        first = select_icl_demonstrations(dataset, unit, dataset.question("an01"), train_ids, context_limit=5, seed=1)
        second = select_icl_demonstrations(dataset, unit, dataset.question("an01"), train_ids, context_limit=5, seed=1)

        assert first == second
        assert len(first) == 5
        assert first == [q for q in train_ids if q in first]

    def test_prompt_layout(self):
        dataset = persona()
        unit = dataset.unit("persona")

        text = icl_build_prompt(dataset, unit, dataset.question("p02"), ["p01"])

        assert "digital twin of a Swiss voter" in text
        assert f"Question: {dataset.question('p01').text}\nAnswer: A) Yes" in text
        assert text.endswith(f"Question: {dataset.question('p02').text}\nAnswer:")

    def test_responder_follows_demonstrations(self):
        dataset = persona()
        unit = dataset.unit("persona")
        responder = IclResponder(dataset, unit, ["p01"])
        prompt = prompt_for(dataset, dataset.question("p02"))

        assert responder.stance_probabilities(prompt).tolist() == pytest.approx([2 / 3, 1 / 3])
        assert responder.greedy_stance(prompt) is Y

    def test_low_temperature_is_greedy(self):
        dataset = persona()
        responder = IclResponder(dataset, dataset.unit("persona"), ["p01"])
        prompt = prompt_for(dataset, dataset.question("p02"))

        assert {c.stance for c in responder.sample(prompt, 50, 0.01, seed=0)} == {Y}
