"""Canonical survey datasets: loading, recoding, inversion and ideology groups.

All three survey families (smartvote, Wahl-o-Mat, ANES) share one JSON
document layout; recoding tables travel with the questions so a new scheme
needs no code change.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import DatasetLoadError, MappingError, RecodeError, UnsupportedOperationError
from .stances import BINARY, LabelSpace, Stance

logger = logging.getLogger(__name__)

SURVEYS = ("smartvote", "WoM", "ANES")
SCHEMES = ("none", "conservative", "aggressive")
UNIT_KINDS = ("candidate", "party", "respondent")
COUNTRIES = ("CH", "DE", "US")
SMARTVOTE_TOPIC_COUNT = 12


class Group(str, Enum):
    LEFT = "Left"
    CENTER = "Center"
    RIGHT = "Right"


GROUP_ORDER = (Group.LEFT, Group.CENTER, Group.RIGHT)

NATIONALITIES = {"CH": "Swiss", "DE": "German", "US": "US"}
COUNTRY_NAMES = {"CH": "Switzerland", "DE": "Germany", "US": "the USA"}

# Keyed on (country, name): FDP is Right in Switzerland and Center in Germany.
_GROUP_TABLE: Dict[Tuple[str, str], Group] = {
    ("CH", "svp"): Group.RIGHT,
    ("CH", "sp"): Group.LEFT,
    ("CH", "fdp"): Group.RIGHT,
    ("CH", "the center"): Group.CENTER,
    ("CH", "green party"): Group.LEFT,
    ("CH", "glp"): Group.CENTER,
    ("DE", "cdu/csu"): Group.RIGHT,
    ("DE", "spd"): Group.CENTER,
    ("DE", "grüne"): Group.LEFT,
    ("DE", "fdp"): Group.CENTER,
    ("DE", "die linke"): Group.LEFT,
    ("DE", "afd"): Group.RIGHT,
    ("US", "extremely liberal"): Group.LEFT,
    ("US", "liberal"): Group.LEFT,
    ("US", "slightly liberal"): Group.CENTER,
    ("US", "moderate"): Group.CENTER,
    ("US", "slightly conservative"): Group.CENTER,
    ("US", "conservative"): Group.RIGHT,
    ("US", "extremely conservative"): Group.RIGHT,
}

_ALIASES: Dict[Tuple[str, str], str] = {
    ("CH", "die mitte"): "the center",
    ("CH", "mitte"): "the center",
    ("CH", "the centre"): "the center",
    ("CH", "center"): "the center",
    ("CH", "greens"): "green party",
    ("CH", "gps"): "green party",
    ("CH", "grüne"): "green party",
    ("DE", "cdu"): "cdu/csu",
    ("DE", "csu"): "cdu/csu",
    ("DE", "gruene"): "grüne",
    ("DE", "die grünen"): "grüne",
    ("DE", "bündnis 90/die grünen"): "grüne",
    ("DE", "linke"): "die linke",
    ("US", "moderate; middle of the road"): "moderate",
}

_LIKERT = {
    "yes": Stance.YES,
    "rather yes": Stance.YES,
    "rather no": Stance.NO,
    "no": Stance.NO,
}

_WOM_TOKENS = {"agree": Stance.YES, "neutral": Stance.NEUTRAL, "disagree": Stance.NO}

_RAW_INVERSES = {
    "yes": "No",
    "no": "Yes",
    "rather yes": "Rather no",
    "rather no": "Rather yes",
    "a": "B",
    "b": "A",
    "agree": "disagree",
    "disagree": "agree",
}


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    topic: Optional[str]
    source_survey: str
    raw_options: Tuple[str, ...] = ()
    scheme_maps: Mapping[str, Tuple[Stance, ...]] = field(default_factory=dict)

    def to_json(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "topic": self.topic,
            "raw_options": list(self.raw_options),
            "scheme_maps": {k: [s.value for s in v] for k, v in self.scheme_maps.items()},
        }


@dataclass(frozen=True)
class UnitProfile:
    unit_id: str
    kind: str
    country: str
    party_or_ideology: str
    group: Group
    responses: Mapping[str, Stance]
    raw_responses: Mapping[str, Any] = field(default_factory=dict)
    comments: Mapping[str, str] = field(default_factory=dict)

    def answered(self, question_ids: Sequence[str]) -> List[str]:
        """Question ids the unit has a response for, in the given order."""
        return [qid for qid in question_ids if qid in self.responses]

    def to_json(self) -> Dict[str, Any]:
        data = {
            "unit_id": self.unit_id,
            "kind": self.kind,
            "country": self.country,
            "party_or_ideology": self.party_or_ideology,
            "responses": dict(self.raw_responses) if self.raw_responses else {
                qid: s.value for qid, s in self.responses.items()
            },
        }
        if self.comments:
            data["comments"] = dict(self.comments)
        return data


@dataclass(frozen=True)
class Dataset:
    survey: str
    units: Tuple[UnitProfile, ...]
    questions: Tuple[Question, ...]
    label_space: LabelSpace
    recoding_scheme: str = "none"
    fixed_test_ids: Tuple[str, ...] = ()

    @property
    def question_ids(self) -> List[str]:
        return [q.id for q in self.questions]

    def question(self, question_id: str) -> Question:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise KeyError(question_id)

    def unit(self, unit_id: str) -> UnitProfile:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise KeyError(unit_id)

    @property
    def country(self) -> str:
        return self.units[0].country

    def to_json(self) -> Dict[str, Any]:
        data = {
            "survey": self.survey,
            "label_space": self.label_space.to_json(),
            "recoding_scheme": self.recoding_scheme,
            "questions": [q.to_json() for q in self.questions],
            "units": [u.to_json() for u in self.units],
        }
        if self.fixed_test_ids:
            data["fixed_test_ids"] = list(self.fixed_test_ids)
        return data


def collapse_likert(option: str) -> Stance:
    """smartvote 4-point answer to a binary stance."""
    try:
        return _LIKERT[str(option).strip().lower()]
    except KeyError:
        raise RecodeError(f"Not a 4-point Likert option: {option!r}")


def recode_anes(question: Question, chosen_index: int, scheme: str) -> Stance:
    table = question.scheme_maps.get(scheme)
    if table is None:
        raise RecodeError(f"Question {question.id} has no '{scheme}' recoding table")
    if not 1 <= chosen_index <= len(table):
        raise RecodeError(
            f"Option index {chosen_index} out of range 1..{len(table)} for question {question.id}"
        )
    return table[chosen_index - 1]


def recode_token(question: Question, token: Any, scheme: str) -> Stance:
    """Turn any raw response token accepted in dataset files into a stance."""
    if isinstance(token, bool):
        raise RecodeError(f"Unknown stance token {token!r} for question {question.id}")
    if isinstance(token, int):
        return recode_anes(question, token, scheme)
    text = str(token).strip()
    if text.isdigit():
        return recode_anes(question, int(text), scheme)
    lowered = text.lower()
    if lowered in _LIKERT:
        return _LIKERT[lowered]
    if lowered in _WOM_TOKENS:
        return _WOM_TOKENS[lowered]
    try:
        return Stance.parse(text)
    except RecodeError:
        raise RecodeError(f"Unknown stance token {token!r} for question {question.id}")


def normalize_party(country: str, party_or_ideology: str) -> str:
    key = (country, " ".join(str(party_or_ideology).split()).casefold())
    return _ALIASES.get(key, key[1])


def assign_group(country: str, party_or_ideology: str) -> Group:
    try:
        return _GROUP_TABLE[(country, normalize_party(country, party_or_ideology))]
    except KeyError:
        raise MappingError(f"No ideology group for {party_or_ideology!r} in {country}")


def _parse_question(record: Dict[str, Any], survey: str, index: int) -> Question:
    try:
        qid = str(record["id"])
        text = str(record["text"])
    except KeyError as e:
        raise DatasetLoadError(f"Question #{index} is missing field {e}")
    scheme_maps = {}
    for scheme, table in (record.get("scheme_maps") or {}).items():
        if scheme not in SCHEMES:
            raise DatasetLoadError(f"Question {qid} declares unknown scheme {scheme!r}")
        scheme_maps[scheme] = tuple(Stance.parse(s) for s in table)
    raw_options = tuple(record.get("raw_options") or ())
    for scheme, table in scheme_maps.items():
        if raw_options and len(table) != len(raw_options):
            raise DatasetLoadError(
                f"Question {qid}: '{scheme}' table has {len(table)} entries for {len(raw_options)} options"
            )
    return Question(
        id=qid,
        text=text,
        topic=record.get("topic") or None,
        source_survey=survey,
        raw_options=raw_options,
        scheme_maps=scheme_maps,
    )


def _parse_unit(
    record: Dict[str, Any],
    questions: Dict[str, Question],
    label_space: LabelSpace,
    scheme: str,
    index: int,
) -> UnitProfile:
    try:
        unit_id = str(record["unit_id"])
        kind = record["kind"]
        country = record["country"]
        party = record["party_or_ideology"]
    except KeyError as e:
        raise DatasetLoadError(f"Unit #{index} is missing field {e}")
    if kind not in UNIT_KINDS:
        raise DatasetLoadError(f"Unit {unit_id}: unknown kind {kind!r}")
    if country not in COUNTRIES:
        raise DatasetLoadError(f"Unit {unit_id}: unknown country {country!r}")

    raw = dict(record.get("responses") or {})
    responses = {}
    for qid, token in raw.items():
        if qid not in questions:
            raise DatasetLoadError(f"Unit {unit_id} answers unknown question id {qid!r}")
        if token is None:
            continue
        stance = recode_token(questions[qid], token, scheme)
        if stance not in label_space:
            raise DatasetLoadError(
                f"Unit {unit_id}, question {qid}: stance {stance.value} outside {label_space!r}"
            )
        responses[qid] = stance
    comments = {str(k): str(v) for k, v in (record.get("comments") or {}).items() if v}
    return UnitProfile(
        unit_id=unit_id,
        kind=kind,
        country=country,
        party_or_ideology=party,
        group=assign_group(country, party),
        responses=responses,
        raw_responses={k: v for k, v in raw.items() if v is not None},
        comments=comments,
    )


def dataset_from_json(data: Dict[str, Any], survey: Optional[str] = None) -> Dataset:
    declared = data.get("survey")
    if declared not in SURVEYS:
        raise DatasetLoadError(f"Unknown survey {declared!r}")
    if survey is not None and survey != declared:
        raise DatasetLoadError(f"File holds a {declared} dataset, expected {survey}")
    scheme = data.get("recoding_scheme", "none")
    if scheme not in SCHEMES:
        raise DatasetLoadError(f"Unknown recoding scheme {scheme!r}")
    try:
        label_space = LabelSpace.from_json(data["label_space"])
    except KeyError:
        raise DatasetLoadError("Dataset is missing 'label_space'")
    except RecodeError as e:
        raise DatasetLoadError(str(e))

    questions = [_parse_question(q, declared, i) for i, q in enumerate(data.get("questions") or [])]
    by_id: Dict[str, Question] = {}
    for q in questions:
        if q.id in by_id:
            raise DatasetLoadError(f"Duplicate question id {q.id!r}")
        if declared == "smartvote" and not q.topic:
            raise DatasetLoadError(f"smartvote question {q.id} has no topic")
        by_id[q.id] = q

    unit_records = data.get("units") or []
    if not unit_records:
        raise DatasetLoadError("no units")
    units = [_parse_unit(u, by_id, label_space, scheme, i) for i, u in enumerate(unit_records)]

    if declared == "smartvote":
        topics = {q.topic for q in questions}
        if len(topics) > SMARTVOTE_TOPIC_COUNT:
            raise DatasetLoadError(f"smartvote questions span {len(topics)} topics, at most 12 allowed")

    fixed = tuple(str(x) for x in data.get("fixed_test_ids") or ())
    for qid in fixed:
        if qid not in by_id:
            raise DatasetLoadError(f"fixed_test_ids references unknown question id {qid!r}")

    return Dataset(
        survey=declared,
        units=tuple(units),
        questions=tuple(questions),
        label_space=label_space,
        recoding_scheme=scheme,
        fixed_test_ids=fixed,
    )


def load_dataset(path: Union[str, Path], survey: Optional[str] = None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"Dataset file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetLoadError(f"{path} is not valid JSON: {e}")
    dataset = dataset_from_json(data, survey)
    logger.info(
        "Loaded %s dataset from %s: %d units, %d questions",
        dataset.survey, path, len(dataset.units), len(dataset.questions),
    )
    return dataset


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dataset.to_json(), f, indent=2, ensure_ascii=False)


def recode_dataset(dataset: Dataset, scheme: str) -> Dataset:
    """Re-derive every response from its raw token under another scheme."""
    if scheme not in SCHEMES:
        raise RecodeError(f"Unknown recoding scheme {scheme!r}")
    data = dataset.to_json()
    data["recoding_scheme"] = scheme
    try:
        return dataset_from_json(data)
    except DatasetLoadError as e:
        raise RecodeError(str(e))


def _invert_raw_token(token: Any, stance: Stance) -> Any:
    if isinstance(token, str):
        stripped = token.strip()
        inverse = _RAW_INVERSES.get(stripped.lower())
        if inverse is not None:
            if stripped.islower():
                return inverse.lower()
            if stripped.isupper() and len(stripped) > 1:
                return inverse.upper()
            return inverse
    # Option indexes have no inverse option; fall back to the canonical label.
    return stance.inverted().value


def invert_answers(dataset: Dataset) -> Dataset:
    if dataset.label_space != BINARY:
        raise UnsupportedOperationError(
            f"Answer inversion is only defined for binary label spaces, not {dataset.label_space!r}"
        )
    units = []
    for unit in dataset.units:
        units.append(replace(
            unit,
            responses={qid: s.inverted() for qid, s in unit.responses.items()},
            raw_responses={
                qid: _invert_raw_token(t, unit.responses[qid]) for qid, t in unit.raw_responses.items()
            },
        ))
    return replace(dataset, units=tuple(units))
