import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, SplitError
from .surveys import Dataset, UnitProfile

STRATEGIES = ("topic_stratified", "random", "fixed_external")


@dataclass(frozen=True)
class Split:
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]
    strategy: str
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SplitError(f"Unknown split strategy {self.strategy!r}")
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise SplitError(f"Train and test overlap on {sorted(overlap)}")

    def unit_train_ids(self, unit: UnitProfile) -> List[str]:
        """Train ids the unit answered; skipped questions drop out."""
        return unit.answered(self.train_ids)

    def unit_test_ids(self, unit: UnitProfile) -> List[str]:
        return unit.answered(self.test_ids)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Split":
        try:
            return cls(
                train_ids=tuple(data["train_ids"]),
                test_ids=tuple(data["test_ids"]),
                strategy=data["strategy"],
                seed=int(data.get("seed", 0)),
            )
        except KeyError as e:
            raise SplitError(f"Split file is missing field {e}")


def split_topic_stratified(dataset: Dataset, seed: int) -> Split:
    """Hold out one question per topic, chosen uniformly with a seeded RNG."""
    by_topic: "OrderedDict[str, List[str]]" = OrderedDict()
    for q in dataset.questions:
        if not q.topic:
            raise SplitError(f"Question {q.id} has no topic")
        by_topic.setdefault(q.topic, []).append(q.id)
    if not by_topic:
        raise SplitError("Dataset has no questions to split")

    rng = np.random.default_rng(seed)
    held_out = set()
    for topic in sorted(by_topic):
        ids = by_topic[topic]
        if not ids:
            raise SplitError(f"Topic {topic!r} has no questions")
        held_out.add(ids[int(rng.integers(len(ids)))])
    return _partition(dataset, held_out, "topic_stratified", seed)


def split_random(dataset: Dataset, n_test: int, seed: int) -> Split:
    ids = dataset.question_ids
    if not 0 < n_test < len(ids):
        raise SplitError(f"n_test must be in 1..{len(ids) - 1}, got {n_test}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(ids), size=n_test, replace=False)
    return _partition(dataset, {ids[i] for i in chosen}, "random", seed)


def split_fixed_external(dataset: Dataset) -> Split:
    if not dataset.fixed_test_ids:
        raise SplitError(f"{dataset.survey} dataset ships no fixed test set")
    return _partition(dataset, set(dataset.fixed_test_ids), "fixed_external", 0)


def _partition(dataset: Dataset, test: set, strategy: str, seed: int) -> Split:
    ids = dataset.question_ids
    return Split(
        train_ids=tuple(i for i in ids if i not in test),
        test_ids=tuple(i for i in ids if i in test),
        strategy=strategy,
        seed=seed,
    )


def subsample_train_ids(train_ids: Sequence[str], fraction: float, seed: int) -> List[str]:
    """Seeded nested subset: for a fixed seed, smaller fractions are subsets of larger ones.

    The original order of ``train_ids`` is preserved, so fraction 1.0 returns
    the list unchanged.
    """
    if not 0 < fraction <= 1:
        raise ConfigError(f"Fraction must be in (0, 1], got {fraction}")
    k = int(math.floor(fraction * len(train_ids) + 1e-9))
    if k == 0:
        raise ConfigError(f"Fraction {fraction} of {len(train_ids)} train questions selects none")
    order = np.random.default_rng(seed).permutation(len(train_ids))
    keep = set(order[:k].tolist())
    return [qid for i, qid in enumerate(train_ids) if i in keep]


def save_split(split: Split, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(split.to_json(), f, indent=2)


def load_split(path: Union[str, Path]) -> Split:
    with open(path, "r", encoding="utf-8") as f:
        return Split.from_json(json.load(f))
