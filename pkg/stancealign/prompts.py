from dataclasses import dataclass
from typing import Optional

from .stances import LabelSpace
from .surveys import COUNTRY_NAMES, NATIONALITIES, Dataset, Question

SYSTEM_PROMPT = (
    "You are a digital twin of a {nationality} voter.\n"
    "You are asked a policy issue or question.\n"
    "You must reason and then answer the question as if you were\n"
    "the voter.\n"
    "You reason and answer in English.\n"
    "Your final answer must be one of the answer options\n"
    "({legend}).\n"
    "You must respond in the following format:\n"
    "<reasoning>\n"
    "  Your reasoning goes here.\n"
    "</reasoning>\n"
    "<answer>\n"
    "Final answer, one of\n"
    "{options}\n"
    "</answer>"
)

ARGUMENT_PROMPT = (
    "You are a {role} in {country}. You reply in English only.\n"
    "We present you with a political issue or question, and you provide us with\n"
    "three to five diverse yet concise arguments {side} this issue or question. {issue}"
)

BIASED_ARGUMENT_PROMPT = (
    "You are a {role} in {country}. You reply in English only.\n"
    "We present you with a political issue or question, and you provide us with "
    "a {bias} argument {side} this issue or question. {issue}"
)

ROLES = {"candidate": "politician", "party": "politician", "respondent": "voter"}
SIDE_WORDS = {"for": "for", "against": "against", "balanced": "both for and against"}


def build_system_prompt(country: str, label_space: LabelSpace) -> str:
    """System prompt with the legend restricted to the label space (binary drops C)."""
    stances = list(label_space)
    legend = ", ".join(f'"{s.letter}" for "{s.value}"' for s in stances)
    options = "\n".join(
        f"  {s.code}{'.' if i == len(stances) - 1 else ','}" for i, s in enumerate(stances)
    )
    return SYSTEM_PROMPT.format(nationality=NATIONALITIES[country], legend=legend, options=options)


@dataclass(frozen=True)
class PromptSpec:
    question_id: str
    question_text: str
    country: str
    label_space: LabelSpace
    topic: Optional[str] = None

    @property
    def system_prompt(self) -> str:
        return build_system_prompt(self.country, self.label_space)

    def to_messages(self) -> list:
        return [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": self.question_text},
        ]

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "question_text": self.question_text,
            "country": self.country,
            "label_space": self.label_space.to_json(),
            "topic": self.topic,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PromptSpec":
        return cls(
            question_id=data["question_id"],
            question_text=data["question_text"],
            country=data["country"],
            label_space=LabelSpace.from_json(data["label_space"]),
            topic=data.get("topic"),
        )


def prompt_for(dataset: Dataset, question: Question, country: Optional[str] = None) -> PromptSpec:
    return PromptSpec(
        question_id=question.id,
        question_text=question.text,
        country=country or dataset.country,
        label_space=dataset.label_space,
        topic=question.topic,
    )


def argument_prompt(issue: str, side: str, country: str, kind: str = "candidate", bias: str = "default") -> str:
    role = ROLES[kind]
    side_words = SIDE_WORDS[side]
    if bias == "default":
        return ARGUMENT_PROMPT.format(role=role, country=COUNTRY_NAMES[country], side=side_words, issue=issue)
    return BIASED_ARGUMENT_PROMPT.format(
        role=role, country=COUNTRY_NAMES[country], bias=bias, side=side_words, issue=issue
    )
