"""Supervised warm start: argument corpora and the SFT schedule."""
import json
import logging
import math
import os
import random
import re
import time
import urllib.request
import zlib
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, CorpusError, GenerationError, TrainingDivergedError
from .grpo import cosine_lr
from .policies import PolicyContract
from .prompts import PromptSpec, argument_prompt, prompt_for
from .schema import render
from .stances import Stance
from .surveys import Dataset, Question, UnitProfile

logger = logging.getLogger(__name__)

BIAS_TAGS = ("default", "progressive", "conservative")
ORIGINS = ("generated", "stub", "comment")
SIDE_STANCES = {"for": Stance.YES, "against": Stance.NO, "balanced": Stance.NEUTRAL}

SftExample = Tuple[PromptSpec, str]


@dataclass(frozen=True)
class ArgumentRecord:
    question_id: str
    stance: Stance
    argument_text: str
    bias_tag: str = "default"
    origin: str = "stub"

    def __post_init__(self):
        if not self.argument_text.strip():
            raise CorpusError(f"Empty argument for question {self.question_id}", [self.question_id])
        if self.bias_tag not in BIAS_TAGS:
            raise CorpusError(f"Unknown bias tag {self.bias_tag!r}", [self.question_id])
        if self.origin not in ORIGINS:
            raise CorpusError(f"Unknown argument origin {self.origin!r}", [self.question_id])

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "stance": self.stance.value,
            "argument_text": self.argument_text,
            "bias_tag": self.bias_tag,
            "origin": self.origin,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ArgumentRecord":
        return cls(
            question_id=str(data["question_id"]),
            stance=Stance.parse(data["stance"]),
            argument_text=data["argument_text"],
            bias_tag=data.get("bias_tag", "default"),
            origin=data.get("origin", "generated"),
        )


def save_arguments(records: Iterable[ArgumentRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")


def load_arguments(path: Union[str, Path]) -> List[ArgumentRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(ArgumentRecord.from_json(json.loads(line)))
    return records


class ArgumentGenerator(ABC):
    origin = "generated"

    @abstractmethod
    def generate(self, prompt_text: str, question: Question, side: str, bias: str) -> List[str]:
        pass


_STUB_OPENERS = {
    "for": ("It would", "This would", "Adopting it would", "In practice it would", "Over time it would"),
    "against": ("It would", "This risks", "Adopting it would", "In practice it could", "Over time it would"),
    "balanced": ("On one hand it", "Supporters say it", "Critics argue it", "The evidence suggests it", "It"),
}
_STUB_CLAIMS = {
    "for": (
        "improve fairness for ordinary households", "strengthen public services",
        "reduce long term costs for the state", "protect future generations",
        "give citizens more security", "make the economy more resilient",
    ),
    "against": (
        "place a heavy burden on taxpayers", "limit personal freedom",
        "weaken local decision making", "create unintended side effects",
        "hurt small businesses", "expand bureaucracy without clear benefits",
    ),
    "balanced": (
        "helps some groups while costing others", "has uncertain effects on the budget",
        "depends on how it is implemented", "solves one problem but may create another",
        "has support and opposition across the spectrum", "needs more evidence before a verdict",
    ),
}
_STUB_BIAS = {
    "default": "",
    "progressive": " and advances social equality",
    "conservative": " and preserves established traditions",
}


class StubArgumentGenerator(ArgumentGenerator):
    """Deterministic templated arguments; no network."""

    origin = "stub"

    def __init__(self, seed: int = 0, n_arguments: int = 3):
        if not 3 <= n_arguments <= 5:
            raise ConfigError(f"Stub generator emits 3 to 5 arguments, got {n_arguments}")
        self.seed = seed
        self.n_arguments = n_arguments

    def generate(self, prompt_text: str, question: Question, side: str, bias: str) -> List[str]:
        key = f"{self.seed}|{question.id}|{side}|{bias}".encode("utf-8")
        rng = random.Random(zlib.crc32(key))
        claims = rng.sample(_STUB_CLAIMS[side], self.n_arguments)
        openers = _STUB_OPENERS[side]
        subject = question.text.rstrip("?.! ")
        return [
            f"{openers[i % len(openers)]} {claim}{_STUB_BIAS[bias]}: {subject}."
            for i, claim in enumerate(claims)
        ]


_LIST_ITEM = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s*(.+?)\s*$")


def split_arguments(text: str) -> List[str]:
    """Split a numbered or bulleted list reply into separate arguments."""
    items = [m.group(1) for m in map(_LIST_ITEM.match, text.splitlines()) if m]
    if items:
        return items
    return [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]


class ChatArgumentGenerator(ArgumentGenerator):
    """Posts the argument prompt to an OpenAI-compatible chat completions endpoint."""

    def __init__(
        self,
        endpoint: Optional[str] = None,
        model: Optional[str] = None,
        timeout: Optional[float] = None,
        retries: int = 3,
        backoff: float = 2.0,
    ):
        self.endpoint = endpoint or os.getenv("STANCEALIGN_GENERATOR_ENDPOINT")
        self.model = model or os.getenv("STANCEALIGN_GENERATOR_MODEL")
        self.timeout = timeout or float(os.getenv("STANCEALIGN_GENERATOR_TIMEOUT", "60"))
        self.retries = retries
        self.backoff = backoff
        if not self.endpoint:
            raise ConfigError("Either an endpoint or STANCEALIGN_GENERATOR_ENDPOINT must be provided")
        if not self.model:
            raise ConfigError("Either a model or STANCEALIGN_GENERATOR_MODEL must be provided")

    def _post(self, prompt_text: str) -> str:
        payload = {"model": self.model, "messages": [{"role": "user", "content": prompt_text}]}
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as response:
            if response.status != 200:
                raise GenerationError(f"Generator request failed with status {response.status}")
            body = json.loads(response.read().decode("utf-8"))
        return body["choices"][0]["message"]["content"]

    def generate(self, prompt_text: str, question: Question, side: str, bias: str) -> List[str]:
        last_error = None
        for attempt in range(self.retries):
            try:
                arguments = split_arguments(self._post(prompt_text))
                if arguments:
                    return arguments
                last_error = GenerationError("empty reply")
            except Exception as e:
                last_error = e
                logger.warning("Argument generation for %s failed (attempt %d): %s", question.id, attempt + 1, e)
            if attempt + 1 < self.retries:
                time.sleep(self.backoff * (attempt + 1))
        raise GenerationError(f"Argument generation for {question.id} failed after {self.retries} attempts: {last_error}")


def generate_arguments(
    question: Question,
    stance_side: str,
    bias: str,
    generator: ArgumentGenerator,
    country: str,
    kind: str = "candidate",
) -> List[ArgumentRecord]:
    if stance_side not in SIDE_STANCES:
        raise ConfigError(f"Unknown argument side {stance_side!r}")
    if bias not in BIAS_TAGS:
        raise ConfigError(f"Unknown bias tag {bias!r}")
    prompt_text = argument_prompt(question.text, stance_side, country, kind, bias)
    texts = generator.generate(prompt_text, question, stance_side, bias)
    return [
        ArgumentRecord(question.id, SIDE_STANCES[stance_side], text, bias, generator.origin)
        for text in texts if text.strip()
    ]


def generate_argument_corpus(
    dataset: Dataset,
    generator: ArgumentGenerator,
    bias: str = "default",
    question_ids: Optional[Sequence[str]] = None,
    max_in_flight: int = 4,
) -> Tuple[List[ArgumentRecord], List[str]]:
    """Arguments for every side the label space needs; returns (records, uncovered question ids)."""
    ids = list(question_ids) if question_ids is not None else dataset.question_ids
    sides = ["for", "against"] + ([] if dataset.label_space.is_binary else ["balanced"])
    kind = dataset.units[0].kind
    jobs = [(dataset.question(qid), side) for qid in ids for side in sides]

    def run(job):
        question, side = job
        try:
            return generate_arguments(question, side, bias, generator, dataset.country, kind)
        except GenerationError as e:
            logger.warning("Question %s left uncovered (%s): %s", question.id, side, e)
            return None

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(run, jobs))

    records: List[ArgumentRecord] = []
    uncovered: List[str] = []
    for (question, _), result in zip(jobs, results):
        if result is None:
            if question.id not in uncovered:
                uncovered.append(question.id)
        else:
            records.extend(result)
    return records, uncovered


def build_sft_corpus(
    dataset: Dataset,
    unit: UnitProfile,
    train_ids: Sequence[str],
    arguments: Sequence[ArgumentRecord],
    bias_tag: str = "default",
) -> List[SftExample]:
    """One example per (train question, argument matching the unit's stance).

    A unit's own comment on a question replaces the synthetic arguments for it.
    """
    index: Dict[Tuple[str, Stance], List[ArgumentRecord]] = {}
    for record in arguments:
        if record.bias_tag == bias_tag:
            index.setdefault((record.question_id, record.stance), []).append(record)

    corpus: List[SftExample] = []
    missing: List[str] = []
    for qid in unit.answered(train_ids):
        truth = unit.responses[qid]
        prompt = prompt_for(dataset, dataset.question(qid), unit.country)
        if qid in unit.comments:
            corpus.append((prompt, render(unit.comments[qid], truth)))
            continue
        matches = index.get((qid, truth), [])
        if not matches:
            missing.append(qid)
        for record in matches:
            corpus.append((prompt, render(record.argument_text, truth)))
    if missing:
        raise CorpusError(
            f"No {bias_tag} argument matching unit {unit.unit_id}'s stance for questions: {', '.join(missing)}",
            missing,
        )
    return corpus


@dataclass(frozen=True)
class SftConfig:
    steps: int = 800
    batch_size: int = 8
    lr: float = 5e-5
    warmup_steps: int = 80
    max_grad_norm: Optional[float] = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("SFT steps must be >= 0 and batch size >= 1")
        if self.warmup_steps < 0:
            raise ConfigError("SFT warm-up steps must be >= 0")

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "warmup_steps": self.warmup_steps,
            "max_grad_norm": self.max_grad_norm,
            "seed": self.seed,
        }


def sft_train(
    policy: PolicyContract,
    corpus: Sequence[SftExample],
    config: SftConfig,
) -> Tuple[PolicyContract, List[float]]:
    """Cycle uniformly over seeded shuffles of the corpus for ``config.steps`` steps."""
    if not corpus:
        raise CorpusError("SFT corpus is empty")
    rng = np.random.default_rng(config.seed)
    order: List[int] = []
    losses: List[float] = []
    for step in range(config.steps):
        batch = []
        while len(batch) < config.batch_size:
            if not order:
                order = rng.permutation(len(corpus)).tolist()
            batch.append(corpus[order.pop()])
        lr = cosine_lr(step, config)
        loss = policy.sft_update(batch, lr, config.max_grad_norm)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"SFT loss became {loss} at step {step} (lr={lr:.3g})")
        losses.append(loss)
        if step % 100 == 0:
            logger.debug("SFT step %d: loss=%.4f lr=%.3g", step, loss, lr)
    return policy, losses
