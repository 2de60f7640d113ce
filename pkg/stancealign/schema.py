"""Render and parse the tagged ``<reasoning>…</reasoning><answer>…</answer>`` output.

Tag scoring: a tag scores iff it occurs exactly once and after every tag
scored before it; scoring stops at the first tag that fails. Body extraction
is separate and lenient, so ``parse(render(r, s))`` recovers ``r`` and ``s``
even when ``r`` itself contains tag strings.
"""
import re
from dataclasses import dataclass
from typing import Optional, Tuple, Union

from .stances import TERNARY, LabelSpace, Stance

TAGS = ("<reasoning>", "</reasoning>", "<answer>", "</answer>")

_WHOLE = re.compile(r"\A\s*<reasoning>(.*)</reasoning>\s*<answer>(.*?)</answer>\s*\Z", re.DOTALL)
_LONE_ANSWER = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_LETTER = re.compile(r"\A[\W_]*([abc])(?![a-z0-9])", re.IGNORECASE)
_LABEL = re.compile(r"\b(yes|no|neutral)\b", re.IGNORECASE)


@dataclass(frozen=True)
class ParseResult:
    tags_found: Tuple[bool, bool, bool, bool]
    reasoning_body: Optional[str]
    answer_body: Optional[str]
    stance: Optional[Stance]

    @property
    def tag_count(self) -> int:
        return sum(self.tags_found)

    @property
    def resolved(self) -> bool:
        return self.stance is not None


def render(reasoning: str, stance: Stance) -> str:
    return f"<reasoning>{reasoning}</reasoning><answer>{stance.code}</answer>"


def score_tags(text: str) -> Tuple[bool, bool, bool, bool]:
    found = [False] * len(TAGS)
    cursor = 0
    for i, tag in enumerate(TAGS):
        if text.count(tag) != 1:
            break
        position = text.find(tag)
        if position < cursor:
            break
        found[i] = True
        cursor = position + len(tag)
    return tuple(found)


def _first_sequence(text: str) -> Optional[Tuple[str, str]]:
    start = text.find(TAGS[0])
    if start < 0:
        return None
    bodies = []
    cursor = start + len(TAGS[0])
    for opening, closing in ((None, TAGS[1]), (TAGS[2], TAGS[3])):
        if opening is not None:
            at = text.find(opening, cursor)
            if at < 0:
                return None
            cursor = at + len(opening)
        end = text.find(closing, cursor)
        if end < 0:
            return None
        bodies.append(text[cursor:end])
        cursor = end + len(closing)
    return bodies[0], bodies[1]


def extract_stance(answer_body: Optional[str], label_space: LabelSpace = TERNARY) -> Optional[Stance]:
    """Leading letter code wins over a label word; outside the label space is unresolved."""
    if not answer_body:
        return None
    letter = _LETTER.match(answer_body.strip())
    if letter:
        stance = Stance.from_letter(letter.group(1))
    else:
        word = _LABEL.search(answer_body)
        if not word:
            return None
        stance = Stance.parse(word.group(1))
    return stance if stance in label_space else None


def parse(text: Union[str, bytes], label_space: LabelSpace = TERNARY) -> ParseResult:
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    tags_found = score_tags(text)

    reasoning_body = answer_body = None
    whole = _WHOLE.match(text)
    if whole:
        reasoning_body, answer_body = whole.group(1), whole.group(2)
    else:
        sequence = _first_sequence(text)
        if sequence:
            reasoning_body, answer_body = sequence
        else:
            lone = _LONE_ANSWER.search(text)
            if lone:
                answer_body = lone.group(1)

    return ParseResult(
        tags_found=tags_found,
        reasoning_body=reasoning_body,
        answer_body=answer_body,
        stance=extract_stance(answer_body, label_space),
    )
