"""Per-run scoring of a responder against a unit's held-out answers."""
import logging
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import f1_score, recall_score

from .errors import MetricError
from .policies import Responder
from .prompts import prompt_for
from .stances import BINARY, LabelSpace, Stance
from .surveys import Dataset, UnitProfile

logger = logging.getLogger(__name__)

UNRESOLVED = "UNRESOLVED"

Predictions = Sequence[Optional[Stance]]


def _encode(predictions: Predictions, truths: Sequence[Stance]) -> Tuple[List[str], List[str]]:
    if len(predictions) != len(truths):
        raise MetricError(f"Got {len(predictions)} predictions for {len(truths)} ground-truth answers")
    if not truths:
        raise MetricError("Cannot score an empty set of answers")
    return [UNRESOLVED if p is None else p.value for p in predictions], [t.value for t in truths]


def macro_f1(predictions: Predictions, truths: Sequence[Stance], label_space: LabelSpace) -> float:
    """Unweighted mean F1 over every class of the label space; absent classes score 0."""
    y_pred, y_true = _encode(predictions, truths)
    labels = [s.value for s in label_space]
    return float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0))


def accuracy(predictions: Predictions, truths: Sequence[Stance]) -> float:
    y_pred, y_true = _encode(predictions, truths)
    return float(np.mean([p == t for p, t in zip(y_pred, y_true)]))


def per_class_recall(predictions: Predictions, truths: Sequence[Stance], label_space: LabelSpace) -> Dict[Stance, float]:
    """Recall per class; classes with no ground-truth instance are left out."""
    y_pred, y_true = _encode(predictions, truths)
    present = [s for s in label_space if s.value in y_true]
    if not present:
        return {}
    recalls = recall_score(y_true, y_pred, labels=[s.value for s in present], average=None, zero_division=0)
    return {s: float(r) for s, r in zip(present, recalls)}


def drop_neutral_rescore(predictions: Predictions, truths: Sequence[Stance]) -> Tuple[float, float]:
    kept = [(p, t) for p, t in zip(predictions, truths) if t is not Stance.NEUTRAL]
    if not kept:
        raise MetricError("Every ground-truth answer is Neutral; nothing left to rescore")
    preds = [p for p, _ in kept]
    trues = [t for _, t in kept]
    return macro_f1(preds, trues, BINARY), accuracy(preds, trues)


def confusion_matrix(predictions: Predictions, truths: Sequence[Stance], label_space: LabelSpace) -> pd.DataFrame:
    """Counts with ground truth on rows and predictions (plus unresolved) on columns."""
    y_pred, y_true = _encode(predictions, truths)
    labels = [s.value for s in label_space] + [UNRESOLVED]
    counts = sk_confusion_matrix(y_true, y_pred, labels=labels)[: len(label_space)]
    return pd.DataFrame(
        counts,
        index=pd.Index([s.value for s in label_space], name="truth"),
        columns=pd.Index([s.value for s in label_space] + ["Unresolved"], name="prediction"),
    )


def neutral_base_rate(truths: Sequence[Stance], label_space: LabelSpace) -> float:
    if label_space.is_binary or not truths:
        return 0.0
    return sum(t is Stance.NEUTRAL for t in truths) / len(truths)


@dataclass
class RunScores:
    unit_id: str
    method: str
    run_index: int
    macro_f1: float
    accuracy: float
    per_class_recall: Dict[Stance, float]
    neutral_base_rate: float
    drop_neutral_f1: Optional[float] = None
    drop_neutral_accuracy: Optional[float] = None
    predictions: List[Optional[Stance]] = field(default_factory=list)
    truths: List[Stance] = field(default_factory=list)
    group: Optional[str] = None
    seed: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "method": self.method,
            "run_index": self.run_index,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "per_class_recall": {s.value: r for s, r in self.per_class_recall.items()},
            "neutral_base_rate": self.neutral_base_rate,
            "drop_neutral_f1": self.drop_neutral_f1,
            "drop_neutral_accuracy": self.drop_neutral_accuracy,
            "predictions": [None if p is None else p.value for p in self.predictions],
            "truths": [t.value for t in self.truths],
            "group": self.group,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunScores":
        return cls(
            unit_id=data["unit_id"],
            method=data["method"],
            run_index=int(data["run_index"]),
            macro_f1=float(data["macro_f1"]),
            accuracy=float(data["accuracy"]),
            per_class_recall={Stance(k): float(v) for k, v in data.get("per_class_recall", {}).items()},
            neutral_base_rate=float(data.get("neutral_base_rate", 0.0)),
            drop_neutral_f1=data.get("drop_neutral_f1"),
            drop_neutral_accuracy=data.get("drop_neutral_accuracy"),
            predictions=[None if p is None else Stance(p) for p in data.get("predictions", [])],
            truths=[Stance(t) for t in data.get("truths", [])],
            group=data.get("group"),
            seed=data.get("seed"),
        )


def score_run(
    predictions: Predictions,
    truths: Sequence[Stance],
    label_space: LabelSpace,
    unit_id: str,
    method: str,
    run_index: int,
    group: Optional[str] = None,
    seed: Optional[int] = None,
) -> RunScores:
    drop_f1 = drop_acc = None
    if not label_space.is_binary and any(t is not Stance.NEUTRAL for t in truths):
        drop_f1, drop_acc = drop_neutral_rescore(predictions, truths)
    return RunScores(
        unit_id=unit_id,
        method=method,
        run_index=run_index,
        macro_f1=macro_f1(predictions, truths, label_space),
        accuracy=accuracy(predictions, truths),
        per_class_recall=per_class_recall(predictions, truths, label_space),
        neutral_base_rate=neutral_base_rate(truths, label_space),
        drop_neutral_f1=drop_f1,
        drop_neutral_accuracy=drop_acc,
        predictions=list(predictions),
        truths=list(truths),
        group=group,
        seed=seed,
    )


def run_seeds(n_runs: int, base_seed: int = 0) -> List[int]:
    return [base_seed * 1000 + r for r in range(1, n_runs + 1)]


def evaluate_unit(
    policy: Responder,
    dataset: Dataset,
    unit: UnitProfile,
    test_ids: Sequence[str],
    n_runs: int = 8,
    temperature: float = 1.0,
    seeds: Optional[Sequence[int]] = None,
    method: str = "",
) -> List[RunScores]:
    """One stochastic sample per test question per run, scored run by run."""
    test_ids = unit.answered(test_ids)
    if not test_ids:
        raise MetricError(f"Unit {unit.unit_id} has no answered test questions")
    seeds = list(seeds) if seeds is not None else run_seeds(n_runs)
    if len(seeds) != n_runs:
        raise MetricError(f"Need {n_runs} seeds, got {len(seeds)}")
    prompts = [prompt_for(dataset, dataset.question(qid), unit.country) for qid in test_ids]
    truths = [unit.responses[qid] for qid in test_ids]
    group = unit.group.value
    scores = []
    for run_index, seed in enumerate(seeds, start=1):
        predictions = []
        for prompt in prompts:
            question_seed = (seed + zlib.crc32(prompt.question_id.encode("utf-8"))) % (2 ** 32)
            predictions.append(policy.sample(prompt, 1, temperature, question_seed)[0].stance)
        scores.append(score_run(
            predictions, truths, dataset.label_space, unit.unit_id, method, run_index, group, seed,
        ))
    logger.debug(
        "Evaluated %s on unit %s: mean macro-F1 %.4f",
        method or type(policy).__name__, unit.unit_id, np.mean([s.macro_f1 for s in scores]),
    )
    return scores
