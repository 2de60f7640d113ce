"""Reference responders: random, majority answer and in-context learning."""
import logging
import zlib
from collections import Counter
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import MetricError
from .policies import Completion, Responder, stance_completion
from .prompts import PromptSpec, build_system_prompt
from .stances import CANONICAL_ORDER, Stance
from .surveys import Dataset, Question, UnitProfile

logger = logging.getLogger(__name__)


def majority_baseline(responses: Sequence[Stance]) -> Stance:
    """Modal stance; ties go to the first in Yes, No, Neutral order."""
    if not responses:
        raise MetricError("Majority baseline needs at least one training answer")
    counts = Counter(responses)
    top = max(counts.values())
    return next(s for s in CANONICAL_ORDER if counts.get(s, 0) == top)


class MajorityResponder(Responder):
    def __init__(self, stance: Stance):
        self.stance = stance

    @classmethod
    def for_unit(cls, unit: UnitProfile, train_ids: Sequence[str]) -> "MajorityResponder":
        return cls(majority_baseline([unit.responses[q] for q in unit.answered(train_ids)]))

    def sample(self, prompt: PromptSpec, n: int, temperature: float, seed: int) -> List[Completion]:
        return [stance_completion(prompt, self.stance) for _ in range(n)]

    def greedy_stance(self, prompt: PromptSpec) -> Optional[Stance]:
        return self.stance


class RandomResponder(Responder):
    """Uniform over the label space of each prompt."""

    def sample(self, prompt: PromptSpec, n: int, temperature: float, seed: int) -> List[Completion]:
        rng = np.random.default_rng(seed)
        stances = prompt.label_space.stances
        logprob = -float(np.log(len(stances)))
        return [stance_completion(prompt, stances[int(i)], logprob) for i in rng.integers(len(stances), size=n)]


def random_baseline() -> RandomResponder:
    return RandomResponder()


def select_icl_demonstrations(
    dataset: Dataset,
    unit: UnitProfile,
    test_question: Question,
    train_ids: Sequence[str],
    context_limit: Optional[int] = None,
    seed: int = 0,
) -> List[str]:
    """Same-topic answered training questions, else all of them; a seeded subset past ``context_limit``."""
    answered = unit.answered(train_ids)
    pool = answered
    if test_question.topic is not None:
        same_topic = [q for q in answered if dataset.question(q).topic == test_question.topic]
        if same_topic:
            pool = same_topic
    if context_limit is not None and len(pool) > context_limit:
        rng = np.random.default_rng((seed + zlib.crc32(test_question.id.encode("utf-8"))) % (2 ** 32))
        keep = set(rng.choice(len(pool), size=context_limit, replace=False).tolist())
        pool = [q for i, q in enumerate(pool) if i in keep]
    return pool


def icl_build_prompt(
    dataset: Dataset,
    unit: UnitProfile,
    test_question: Question,
    train_ids: Sequence[str],
    context_limit: Optional[int] = None,
    seed: int = 0,
) -> str:
    demonstrations = select_icl_demonstrations(dataset, unit, test_question, train_ids, context_limit, seed)
    if not demonstrations:
        logger.warning("No demonstrations for unit %s on question %s", unit.unit_id, test_question.id)
    parts = [build_system_prompt(unit.country, dataset.label_space)]
    for qid in demonstrations:
        parts.append(f"Question: {dataset.question(qid).text}\nAnswer: {unit.responses[qid].code}")
    parts.append(f"Question: {test_question.text}\nAnswer:")
    return "\n\n".join(parts)


class IclResponder(Responder):
    """Answers from Laplace-smoothed stance frequencies of the selected demonstrations."""

    def __init__(
        self,
        dataset: Dataset,
        unit: UnitProfile,
        train_ids: Sequence[str],
        context_limit: Optional[int] = None,
        seed: int = 0,
    ):
        self.dataset = dataset
        self.unit = unit
        self.train_ids = list(train_ids)
        self.context_limit = context_limit
        self.seed = seed
        self._cache: Dict[str, np.ndarray] = {}

    def stance_probabilities(self, prompt: PromptSpec) -> np.ndarray:
        if prompt.question_id not in self._cache:
            question = self.dataset.question(prompt.question_id)
            demos = select_icl_demonstrations(
                self.dataset, self.unit, question, self.train_ids, self.context_limit, self.seed,
            )
            counts = Counter(self.unit.responses[q] for q in demos)
            smoothed = np.array([counts.get(s, 0) + 1.0 for s in prompt.label_space])
            self._cache[prompt.question_id] = smoothed / smoothed.sum()
        return self._cache[prompt.question_id]

    def sample(self, prompt: PromptSpec, n: int, temperature: float, seed: int) -> List[Completion]:
        probs = self.stance_probabilities(prompt)
        scaled = np.log(probs) / temperature
        tempered = np.exp(scaled - scaled.max())
        tempered /= tempered.sum()
        rng = np.random.default_rng(seed)
        stances = prompt.label_space.stances
        return [
            stance_completion(prompt, stances[int(i)], float(np.log(probs[i])))
            for i in rng.choice(len(stances), size=n, p=tempered)
        ]

    def greedy_stance(self, prompt: PromptSpec) -> Optional[Stance]:
        return prompt.label_space.stances[int(np.argmax(self.stance_probabilities(prompt)))]
