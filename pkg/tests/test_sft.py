import pytest
import json
import os
import tempfile
import urllib.error
from pathlib import Path
from unittest.mock import Mock, patch

import numpy as np

from stancealign.errors import ConfigError, CorpusError, GenerationError, TrainingDivergedError
from stancealign.policies import ToyTabularPolicy
from stancealign.prompts import prompt_for
from stancealign.schema import parse
from stancealign.sft import (
    ArgumentRecord,
    ChatArgumentGenerator,
    SftConfig,
    StubArgumentGenerator,
    build_sft_corpus,
    generate_argument_corpus,
    generate_arguments,
    load_arguments,
    save_arguments,
    sft_train,
    split_arguments,
)
from stancealign.splits import split_topic_stratified
from stancealign.stances import Stance
from stancealign.surveys import Question
from stancealign.synthetic import persona, wom_like

TAXES = Question(id="q1", text="Should the state raise taxes?", topic="Finances", source_survey="smartvote")


def recording_generator(texts=("first", "second", "third")):
    generator = Mock()
    generator.origin = "generated"
    generator.generate.return_value = list(texts)
    return generator


class TestArgumentRecord:
    def test_empty_text_rejected(self):
        with pytest.raises(CorpusError):
            ArgumentRecord("q1", Stance.YES, "   ")

    def test_unknown_bias(self):
        with pytest.raises(CorpusError):
            ArgumentRecord("q1", Stance.YES, "text", bias_tag="radical")

    def test_save_and_load(self):
        records = [
            ArgumentRecord("q1", Stance.YES, "Lower deficits", "default", "stub"),
            ArgumentRecord("q1", Stance.NO, "Hurts growth", "conservative", "generated"),
        ]
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "arguments" / "default.jsonl"
            save_arguments(records, path)

            assert load_arguments(path) == records


class TestGenerateArguments:
    def test_stub_is_deterministic(self):
        first = generate_arguments(TAXES, "for", "default", StubArgumentGenerator(seed=1), "CH")
        second = generate_arguments(TAXES, "for", "default", StubArgumentGenerator(seed=1), "CH")

        assert len(first) >= 3
        assert first == second
        assert all(r.stance is Stance.YES and r.origin == "stub" for r in first)

    def test_stub_argument_count(self):
        records = generate_arguments(TAXES, "against", "default", StubArgumentGenerator(n_arguments=5), "CH")

        assert len(records) == 5
        assert len({r.argument_text for r in records}) == 5
        with pytest.raises(ConfigError):
            StubArgumentGenerator(n_arguments=6)

    def test_default_prompt(self):
        generator = recording_generator()

        generate_arguments(TAXES, "against", "default", generator, "CH")

        prompt_text = generator.generate.call_args[0][0]
        assert prompt_text.startswith("You are a politician in Switzerland. You reply in English only.")
        assert "three to five diverse yet concise arguments against this issue or question." in prompt_text
        assert prompt_text.endswith(TAXES.text)

    def test_biased_prompt(self):
        generator = recording_generator(["only one"])

        records = generate_arguments(TAXES, "for", "progressive", generator, "CH")

        prompt_text = generator.generate.call_args[0][0]
        assert "a progressive argument for this issue or question." in prompt_text
        assert [r.bias_tag for r in records] == ["progressive"]

    def test_balanced_side_is_neutral(self):
        records = generate_arguments(TAXES, "balanced", "default", StubArgumentGenerator(), "CH")

        assert {r.stance for r in records} == {Stance.NEUTRAL}

    def test_unknown_side(self):
        with pytest.raises(ConfigError):
            generate_arguments(TAXES, "sideways", "default", StubArgumentGenerator(), "CH")


class TestGenerateArgumentCorpus:
    def test_binary_sides(self):
        dataset = persona()

        records, uncovered = generate_argument_corpus(dataset, StubArgumentGenerator())

        assert uncovered == []
        assert len(records) == 10 * 2 * 3
        assert {r.stance for r in records} == {Stance.YES, Stance.NO}

    def test_ternary_adds_balanced_side(self):
        dataset = wom_like()

        records, _ = generate_argument_corpus(dataset, StubArgumentGenerator(), question_ids=["wom01", "wom02"])

        assert {r.stance for r in records} == {Stance.YES, Stance.NO, Stance.NEUTRAL}
        assert len(records) == 2 * 3 * 3

    def test_failing_questions_are_uncovered(self):
        stub = StubArgumentGenerator()
        generator = Mock()
        generator.origin = "generated"

        def generate(prompt_text, question, side, bias):
            if question.id == "p02":
                raise GenerationError("timeout")
            return stub.generate(prompt_text, question, side, bias)

        generator.generate.side_effect = generate

        records, uncovered = generate_argument_corpus(persona(), generator, max_in_flight=2)

        assert uncovered == ["p02"]
        assert "p02" not in {r.question_id for r in records}
        assert len(records) == 9 * 2 * 3


class TestChatArgumentGenerator:
    def test_requires_endpoint(self):
        with patch.dict(os.environ, {}, clear=True):
            with pytest.raises(ConfigError) as exc_info:
                ChatArgumentGenerator(model="m")

            assert "STANCEALIGN_GENERATOR_ENDPOINT" in str(exc_info.value)

    def test_env_configuration(self):
        env = {
            'STANCEALIGN_GENERATOR_ENDPOINT': 'http://localhost:8000/v1/chat/completions',
            'STANCEALIGN_GENERATOR_MODEL': 'local-model',
            'STANCEALIGN_GENERATOR_TIMEOUT': '5',
        }
        with patch.dict(os.environ, env, clear=True):
            generator = ChatArgumentGenerator()

        assert generator.endpoint == env['STANCEALIGN_GENERATOR_ENDPOINT']
        assert generator.model == "local-model"
        assert generator.timeout == 5.0

    def test_generate_posts_prompt(self):
        reply = {"choices": [{"message": {"content": "1. Fairer\n2. Cheaper\n3. Simpler"}}]}
        with patch('urllib.request.urlopen') as mock_urlopen:
            mock_response = Mock()
            mock_response.status = 200
            mock_response.read.return_value = json.dumps(reply).encode("utf-8")
            mock_urlopen.return_value.__enter__.return_value = mock_response

            generator = ChatArgumentGenerator(endpoint="http://gen.local/v1", model="m")
            arguments = generator.generate("PROMPT", TAXES, "for", "default")

            request = mock_urlopen.call_args[0][0]
            payload = json.loads(request.data.decode("utf-8"))
            assert payload == {"model": "m", "messages": [{"role": "user", "content": "PROMPT"}]}
            assert arguments == ["Fairer", "Cheaper", "Simpler"]

    def test_retries_then_fails(self):
        with patch('urllib.request.urlopen') as mock_urlopen:
            mock_urlopen.side_effect = urllib.error.URLError("connection refused")

            generator = ChatArgumentGenerator(endpoint="http://gen.local/v1", model="m", retries=3, backoff=0.0)

            with pytest.raises(GenerationError) as exc_info:
                generator.generate("PROMPT", TAXES, "for", "default")

            assert mock_urlopen.call_count == 3
            assert "after 3 attempts" in str(exc_info.value)


class TestSplitArguments:
    def test_numbered_and_bulleted(self):
        assert split_arguments("1. first\n2) second\n- third\n") == ["first", "second", "third"]

    def test_paragraphs(self):
        assert split_arguments("One point.\n\nAnother point.") == ["One point.", "Another point."]


class TestBuildSftCorpus:
    def test_one_example_per_matching_argument(self):
        dataset = persona()
        unit = dataset.unit("persona")
        arguments = [
            ArgumentRecord("p01", Stance.YES, "Helps families"),
            ArgumentRecord("p01", Stance.YES, "Saves money"),
            ArgumentRecord("p01", Stance.NO, "Too expensive"),
        ]

        corpus = build_sft_corpus(dataset, unit, ["p01"], arguments)

        assert len(corpus) == 2
        assert [parse(target).reasoning_body for _, target in corpus] == ["Helps families", "Saves money"]
        assert all(parse(target).tag_count == 4 for _, target in corpus)
        assert all(prompt.question_id == "p01" for prompt, _ in corpus)

    def test_empty_train_set(self):
        dataset = persona()

        assert build_sft_corpus(dataset, dataset.unit("persona"), [], []) == []

    def test_missing_arguments_listed(self):
        dataset = persona()
        arguments = [ArgumentRecord("p01", Stance.YES, "Helps families")]

        with pytest.raises(CorpusError) as exc_info:
            build_sft_corpus(dataset, dataset.unit("persona"), ["p01", "p02", "p03"], arguments)

        assert exc_info.value.question_ids == ["p02", "p03"]

    def test_other_bias_does_not_count(self):
        dataset = persona()
        arguments = [ArgumentRecord("p01", Stance.YES, "Equality first", bias_tag="progressive")]

        with pytest.raises(CorpusError):
            build_sft_corpus(dataset, dataset.unit("persona"), ["p01"], arguments)
        assert len(build_sft_corpus(dataset, dataset.unit("persona"), ["p01"], arguments, "progressive")) == 1

    def test_comment_replaces_arguments(self):
        dataset = wom_like()
        unit = dataset.units[0]
        comment = unit.comments["wom01"]

        corpus = build_sft_corpus(dataset, unit, ["wom01"], [])

        assert len(corpus) == 1
        parsed = parse(corpus[0][1])
        assert parsed.reasoning_body == comment
        assert parsed.stance is unit.responses["wom01"]


def persona_corpus():
    dataset = persona()
    unit = dataset.unit("persona")
    split = split_topic_stratified(dataset, seed=0)
    arguments, _ = generate_argument_corpus(dataset, StubArgumentGenerator())
    return dataset, unit, split, build_sft_corpus(dataset, unit, split.train_ids, arguments)


class TestSftTrain:
    def test_learns_persona_answers(self):
        dataset, unit, split, corpus = persona_corpus()
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids)

        policy, losses = sft_train(policy, corpus, SftConfig(steps=300, batch_size=8, lr=0.5, warmup_steps=30))

        assert len(losses) == 300
        assert np.mean(losses[-50:]) < np.mean(losses[:50])
        for qid in split.train_ids:
            spec = prompt_for(dataset, dataset.question(qid))
            assert policy.greedy_stance(spec) is unit.responses[qid]
            samples = policy.sample(spec, 100, 1.0, seed=0)
            assert sum(c.parse.tag_count == 4 for c in samples) >= 99

    def test_zero_steps(self):
        dataset, _, _, corpus = persona_corpus()
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids, init_scale=1.0, seed=3)
        before = {k: v.copy() for k, v in policy.params.items()}

        policy, losses = sft_train(policy, corpus, SftConfig(steps=0, warmup_steps=0))

        assert losses == []
        assert all(np.array_equal(policy.params[k], before[k]) for k in before)

    def test_empty_corpus(self):
        with pytest.raises(CorpusError):
            sft_train(ToyTabularPolicy(persona().label_space), [], SftConfig())

    def test_nan_loss_aborts(self):
        _, _, _, corpus = persona_corpus()
        policy = Mock()
        policy.sft_update.return_value = float("nan")

        with pytest.raises(TrainingDivergedError):
            sft_train(policy, corpus, SftConfig(steps=5, warmup_steps=0))

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SftConfig(batch_size=0)
