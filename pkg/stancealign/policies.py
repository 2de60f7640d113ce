"""Generation/update contract for trainable agents, and the desk-scale toy policies.

The toy policies stand in for a language model: they pick a stance from a
softmax over logits and emit a fixed reasoning template for it, always in the
tagged output format. Each toy completion carries a single decision token, the
stance, whose log-probability is that of the policy itself (the sampling
temperature reshapes draws, not the recorded log-probabilities).
"""
import copy
import json
import logging
import math
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer

from .errors import ConfigError, PolicyContractError, PolicyStateError, TrainingDataError
from .prompts import PromptSpec
from .rewards import RewardBreakdown, whitespace_token_count
from .schema import ParseResult, parse, render
from .stances import LabelSpace, Stance

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

TEMPLATE_BANK: Dict[Stance, Tuple[str, ...]] = {
    Stance.YES: (
        "The proposal addresses a real need and its benefits outweigh the costs.",
        "On balance this measure is consistent with my priorities and I expect it to improve "
        "outcomes for most people affected by it.",
        "I support this because it strengthens fairness and the long term stability of the "
        "country, even if implementation will need care and adequate funding from the start.",
    ),
    Stance.NO: (
        "The costs of this proposal are too high for what it would achieve.",
        "This measure conflicts with my priorities and I expect it to create more problems "
        "than it solves for the people affected.",
        "I oppose this because it restricts individual choice and burdens the public budget "
        "without clear evidence that the intended goals would actually be reached.",
    ),
    Stance.NEUTRAL: (
        "There are reasonable arguments on both sides of this issue.",
        "I see merits and drawbacks here and do not hold a firm view either way on this "
        "particular measure.",
        "The likely effects depend heavily on details that are not settled yet, so I neither "
        "support nor oppose this proposal at the moment and would want more information.",
    ),
}


def template_for(question_id: str, stance: Stance) -> str:
    bank = TEMPLATE_BANK[stance]
    return bank[zlib.crc32(question_id.encode("utf-8")) % len(bank)]


@dataclass
class Completion:
    text: str
    token_ids: List[int]
    token_logprobs: List[float]
    parse: ParseResult
    question_id: str = ""
    reward: Optional[RewardBreakdown] = None

    def __post_init__(self):
        if len(self.token_ids) != len(self.token_logprobs):
            raise PolicyContractError(
                f"Completion has {len(self.token_ids)} tokens but {len(self.token_logprobs)} log-probabilities"
            )

    @property
    def stance(self) -> Optional[Stance]:
        return self.parse.stance

    @property
    def sequence_logprob(self) -> float:
        return float(sum(self.token_logprobs))

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "token_ids": list(self.token_ids),
            "token_logprobs": list(self.token_logprobs),
            "question_id": self.question_id,
        }


def stance_completion(prompt: PromptSpec, stance: Stance, logprob: float = 0.0) -> Completion:
    """Templated completion whose single decision token is the stance."""
    text = render(template_for(prompt.question_id, stance), stance)
    return Completion(
        text=text,
        token_ids=[prompt.label_space.index(stance)],
        token_logprobs=[logprob],
        parse=parse(text, prompt.label_space),
        question_id=prompt.question_id,
    )


@dataclass
class RlSample:
    prompt: PromptSpec
    completion: Completion
    advantage: float


class Responder(ABC):
    """Anything that answers survey prompts; evaluation only needs this much."""

    @abstractmethod
    def sample(self, prompt: PromptSpec, n: int, temperature: float, seed: int) -> List[Completion]:
        pass

    def greedy_stance(self, prompt: PromptSpec) -> Optional[Stance]:
        completions = self.sample(prompt, 1, 1e-6, seed=0)
        return completions[0].stance

    def count_tokens(self, text: str) -> int:
        return whitespace_token_count(text)


class PolicyContract(Responder):
    @abstractmethod
    def logprob(self, prompt: PromptSpec, token_ids: Sequence[int], reference: bool = False) -> float:
        pass

    @abstractmethod
    def sft_update(
        self,
        batch: Sequence[Tuple[PromptSpec, str]],
        learning_rate: float,
        max_grad_norm: Optional[float] = None,
    ) -> float:
        pass

    @abstractmethod
    def rl_update(
        self,
        batch: Sequence[RlSample],
        clip_range: float,
        kl_coefficient: float,
        learning_rate: float,
    ) -> Dict[str, float]:
        pass

    @abstractmethod
    def snapshot_reference(self) -> None:
        pass

    def save(self, path: Union[str, Path]) -> None:
        raise NotImplementedError(f"{type(self).__name__} does not support checkpoints")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _validate_sampling(n: int, temperature: float) -> None:
    if n < 1:
        raise ConfigError(f"Number of samples must be >= 1, got {n}")
    if not temperature > 0:
        raise ConfigError(f"Temperature must be > 0, got {temperature}")


class ToyPolicy(PolicyContract):
    """Shared softmax-over-stances machinery; subclasses define how logits are computed."""

    backend = "toy"

    def __init__(self, label_space: LabelSpace):
        self.label_space = label_space
        self.params: Params = {}
        self.reference: Optional[Params] = None

    @abstractmethod
    def _logits(self, prompt: PromptSpec, params: Params) -> np.ndarray:
        pass

    @abstractmethod
    def _accumulate(self, grads: Params, prompt: PromptSpec, logit_grad: np.ndarray) -> None:
        """Add d(objective)/d(params) for one prompt given d(objective)/d(logits)."""

    def _check_prompt(self, prompt: PromptSpec) -> None:
        if prompt.label_space != self.label_space:
            raise PolicyContractError(
                f"Prompt label space {prompt.label_space!r} differs from policy's {self.label_space!r}"
            )

    def stance_probabilities(self, prompt: PromptSpec, temperature: float = 1.0) -> np.ndarray:
        return _softmax(self._logits(prompt, self.params) / temperature)

    def sample(self, prompt: PromptSpec, n: int, temperature: float, seed: int) -> List[Completion]:
        _validate_sampling(n, temperature)
        self._check_prompt(prompt)
        logits = self._logits(prompt, self.params)
        logprobs = _log_softmax(logits)
        rng = np.random.default_rng(seed)
        draws = rng.choice(len(self.label_space), size=n, p=_softmax(logits / temperature))
        return [
            stance_completion(prompt, self.label_space.stances[int(i)], float(logprobs[i])) for i in draws
        ]

    def greedy_stance(self, prompt: PromptSpec) -> Optional[Stance]:
        self._check_prompt(prompt)
        return self.label_space.stances[int(np.argmax(self._logits(prompt, self.params)))]

    def logprob(self, prompt: PromptSpec, token_ids: Sequence[int], reference: bool = False) -> float:
        params = self._reference_params() if reference else self.params
        logprobs = _log_softmax(self._logits(prompt, params))
        return float(sum(logprobs[i] for i in token_ids[:1]))

    def _reference_params(self) -> Params:
        if self.reference is None:
            raise PolicyStateError("No reference snapshot; call snapshot_reference() first")
        return self.reference

    def snapshot_reference(self) -> None:
        self.reference = copy.deepcopy(self.params)

    def _zero_grads(self) -> Params:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def _step(self, grads: Params, learning_rate: float, max_grad_norm: Optional[float] = None) -> float:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = learning_rate
        if max_grad_norm is not None and norm > max_grad_norm > 0:
            scale *= max_grad_norm / norm
        if scale != 0.0:
            for key, g in grads.items():
                self.params[key] = self.params[key] + scale * g
        return norm

    def sft_update(
        self,
        batch: Sequence[Tuple[PromptSpec, str]],
        learning_rate: float,
        max_grad_norm: Optional[float] = None,
    ) -> float:
        """One cross-entropy step on the stance head; returns the pre-step mean loss."""
        if not batch:
            return 0.0
        grads = self._zero_grads()
        losses = []
        for prompt, target in batch:
            self._check_prompt(prompt)
            parsed = parse(target, self.label_space)
            if parsed.stance is None or parsed.tag_count != 4:
                raise TrainingDataError(f"Malformed SFT target for question {prompt.question_id}: {target!r}")
            logits = self._logits(prompt, self.params)
            index = self.label_space.index(parsed.stance)
            losses.append(-float(_log_softmax(logits)[index]))
            onehot = np.zeros(len(self.label_space))
            onehot[index] = 1.0
            self._accumulate(grads, prompt, (onehot - _softmax(logits)) / len(batch))
        self._step(grads, learning_rate, max_grad_norm)
        return float(np.mean(losses))

    def surrogate_objective(self, batch: Sequence[RlSample], clip_range: float, kl_coefficient: float) -> float:
        return self._surrogate(batch, clip_range, kl_coefficient, with_grad=False)[0]

    def surrogate_gradient(self, batch: Sequence[RlSample], clip_range: float, kl_coefficient: float) -> Params:
        return self._surrogate(batch, clip_range, kl_coefficient, with_grad=True)[1]

    def _surrogate(self, batch, clip_range, kl_coefficient, with_grad):
        """Mean over the batch of min(rho*A, clip(rho)*A) - beta*KL(ref || pi)."""
        reference = self._reference_params()
        grads = self._zero_grads()
        total = 0.0
        clipped = 0
        n = len(batch)
        for item in batch:
            logits = self._logits(item.prompt, self.params)
            logprobs = _log_softmax(logits)
            probs = np.exp(logprobs)
            index = item.completion.token_ids[0]
            ratio = math.exp(float(logprobs[index]) - item.completion.sequence_logprob)
            advantage = item.advantage
            unclipped = ratio * advantage
            bounded = min(max(ratio, 1.0 - clip_range), 1.0 + clip_range) * advantage
            if unclipped <= bounded:
                term, dterm = unclipped, ratio * advantage
            else:
                term, dterm = bounded, 0.0
                clipped += 1
            ref_logprobs = _log_softmax(self._logits(item.prompt, reference))
            kl = float(np.sum(np.exp(ref_logprobs) * (ref_logprobs - logprobs)))
            total += term - kl_coefficient * kl
            if with_grad:
                onehot = np.zeros(len(self.label_space))
                onehot[index] = 1.0
                logit_grad = dterm * (onehot - probs) - kl_coefficient * (probs - np.exp(ref_logprobs))
                self._accumulate(grads, item.prompt, logit_grad / n)
        self._last_clip_fraction = clipped / n if n else 0.0
        return total / n if n else 0.0, grads

    def rl_update(
        self,
        batch: Sequence[RlSample],
        clip_range: float,
        kl_coefficient: float,
        learning_rate: float,
    ) -> Dict[str, float]:
        for item in batch:
            if not math.isfinite(item.advantage):
                raise PolicyContractError(f"Non-finite advantage for question {item.prompt.question_id}")
        objective, grads = self._surrogate(batch, clip_range, kl_coefficient, with_grad=True)
        grad_norm = self._step(grads, learning_rate)
        return {
            "loss": -objective,
            "grad_norm": grad_norm,
            "clip_fraction": self._last_clip_fraction,
        }

    def _state(self) -> dict:
        state = {
            "backend": self.backend,
            "label_space": self.label_space.to_json(),
            "params": {k: v.tolist() for k, v in self.params.items()},
        }
        if self.reference is not None:
            state["reference"] = {k: v.tolist() for k, v in self.reference.items()}
        return state

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self._state(), f)

    def _restore(self, state: dict) -> None:
        self.params = {k: np.asarray(v, dtype=float) for k, v in state["params"].items()}
        if "reference" in state:
            self.reference = {k: np.asarray(v, dtype=float) for k, v in state["reference"].items()}


class ToyTabularPolicy(ToyPolicy):
    """Independent stance logits per question id."""

    backend = "toy-tabular"

    def __init__(self, label_space: LabelSpace, question_ids: Sequence[str] = (), init_scale: float = 0.0, seed: int = 0):
        super().__init__(label_space)
        rng = np.random.default_rng(seed)
        for qid in question_ids:
            self.params[qid] = init_scale * rng.standard_normal(len(label_space))

    def set_logits(self, question_id: str, logits: Sequence[float]) -> None:
        if len(logits) != len(self.label_space):
            raise ConfigError(f"Expected {len(self.label_space)} logits, got {len(logits)}")
        self.params[question_id] = np.asarray(logits, dtype=float)

    def _logits(self, prompt: PromptSpec, params: Params) -> np.ndarray:
        if prompt.question_id not in params:
            return np.zeros(len(self.label_space))
        return params[prompt.question_id]

    def _zero_grads(self) -> Params:
        return {}

    def _accumulate(self, grads: Params, prompt: PromptSpec, logit_grad: np.ndarray) -> None:
        qid = prompt.question_id
        if qid not in self.params:
            self.params[qid] = np.zeros(len(self.label_space))
        grads[qid] = grads.get(qid, np.zeros(len(self.label_space))) + logit_grad

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ToyTabularPolicy":
        with open(path, "r", encoding="utf-8") as f:
            state = json.load(f)
        policy = cls(LabelSpace.from_json(state["label_space"]))
        policy._restore(state)
        return policy


class ToyFeaturizedPolicy(ToyPolicy):
    """Linear stance head over hashed bag-of-words features of the question text."""

    backend = "toy-featurized"

    def __init__(self, label_space: LabelSpace, n_features: int = 256, init_scale: float = 0.0, seed: int = 0):
        super().__init__(label_space)
        self.n_features = n_features
        self.vectorizer = HashingVectorizer(n_features=n_features, alternate_sign=False, norm="l2")
        self._features: Dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        self.params = {
            "W": init_scale * rng.standard_normal((len(label_space), n_features)),
            "b": np.zeros(len(label_space)),
        }

    def featurize(self, text: str) -> np.ndarray:
        if text not in self._features:
            self._features[text] = self.vectorizer.transform([text]).toarray()[0]
        return self._features[text]

    def _logits(self, prompt: PromptSpec, params: Params) -> np.ndarray:
        return params["W"] @ self.featurize(prompt.question_text) + params["b"]

    def _accumulate(self, grads: Params, prompt: PromptSpec, logit_grad: np.ndarray) -> None:
        grads["W"] += np.outer(logit_grad, self.featurize(prompt.question_text))
        grads["b"] += logit_grad

    def _state(self) -> dict:
        state = super()._state()
        state["n_features"] = self.n_features
        return state

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ToyFeaturizedPolicy":
        with open(path, "r", encoding="utf-8") as f:
            state = json.load(f)
        policy = cls(LabelSpace.from_json(state["label_space"]), n_features=state["n_features"])
        policy._restore(state)
        return policy


BACKENDS = ("toy-tabular", "toy-featurized", "socket")


def make_policy(
    backend: str,
    label_space: LabelSpace,
    question_ids: Sequence[str] = (),
    seed: int = 0,
    endpoint: Optional[str] = None,
) -> PolicyContract:
    if backend == "toy-tabular":
        return ToyTabularPolicy(label_space, question_ids, seed=seed)
    if backend == "toy-featurized":
        return ToyFeaturizedPolicy(label_space, seed=seed)
    if backend == "socket":
        from .adapters import SocketPolicy
        return SocketPolicy(endpoint=endpoint)
    raise ConfigError(f"Unknown policy backend {backend!r}; choose from {', '.join(BACKENDS)}")


def load_policy(path: Union[str, Path]) -> ToyPolicy:
    with open(path, "r", encoding="utf-8") as f:
        backend = json.load(f).get("backend")
    if backend == "toy-tabular":
        return ToyTabularPolicy.load(path)
    if backend == "toy-featurized":
        return ToyFeaturizedPolicy.load(path)
    raise ConfigError(f"Checkpoint {path} has unknown backend {backend!r}")
