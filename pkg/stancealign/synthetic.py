"""Deterministic synthetic datasets shaped like the three surveys.

No survey data ships with the package. These generators give the toy profile
and the tests something with the same structure: a latent two-axis position
per party or ideology, a loading per question, and seeded noise. Everything
goes through ``dataset_from_json`` so the files they write load like real ones.
"""
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .surveys import Dataset, dataset_from_json

SMARTVOTE_TOPICS = (
    "Welfare", "Family", "Health", "Education", "Migration", "Society",
    "Finances", "Economy", "Labour", "Environment", "Transport", "Foreign policy",
)

# (left-right, liberal-conservative) positions
CH_PARTIES: Dict[str, Tuple[float, float]] = {
    "SVP": (1.6, 1.2),
    "FDP": (0.9, 0.2),
    "The Center": (0.2, 0.5),
    "GLP": (-0.2, -0.6),
    "SP": (-1.3, -0.7),
    "Green Party": (-1.5, -1.0),
}
DE_PARTIES: Dict[str, Tuple[float, float]] = {
    "CDU/CSU": (0.8, 0.9),
    "SPD": (-0.4, 0.0),
    "Grüne": (-0.9, -1.0),
    "FDP": (0.6, -0.6),
    "Die Linke": (-1.5, -0.3),
    "AfD": (1.6, 1.4),
}
US_IDEOLOGIES: Dict[str, Tuple[float, float]] = {
    "Extremely liberal": (-1.6, -1.2),
    "Liberal": (-1.0, -0.8),
    "Slightly liberal": (-0.4, -0.3),
    "Moderate": (0.0, 0.0),
    "Slightly conservative": (0.4, 0.3),
    "Conservative": (1.0, 0.8),
    "Extremely conservative": (1.6, 1.2),
}

CONSERVATIVE_MAP = ["Yes", "Yes", "Neutral", "No", "No"]
AGGRESSIVE_MAP = ["Yes", "Yes", "Yes", "Yes", "No"]

# Reverse-keyed and three-option items, with their scheme tables.
ANES_SPECIAL_ITEMS: Tuple[Dict[str, Any], ...] = (
    {
        "text": "Do Members of Congress change their votes on legislation because someone "
                "donates money to their campaign?",
        "raw_options": ["Never", "Rarely", "A moderate amount of time", "Very often", "All the time"],
        "scheme_maps": {
            "conservative": ["No", "No", "Neutral", "Yes", "Yes"],
            "aggressive": ["No", "Yes", "Yes", "Yes", "Yes"],
        },
    },
    {
        "text": "Does the increasing number of people of many different races and ethnic groups "
                "in the United States make this country a better place?",
        "raw_options": ["Better", "Worse", "Makes no difference"],
        "scheme_maps": {
            "conservative": ["Yes", "No", "Neutral"],
            "aggressive": ["Yes", "No", "Neutral"],
        },
    },
)


def _loadings(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.normal(0.0, 1.0, size=(n, 2))


def _member_positions(
    rng: np.random.Generator, parties: Dict[str, Tuple[float, float]], per_party: int, spread: float,
) -> List[Tuple[str, np.ndarray]]:
    members = []
    for party, centre in parties.items():
        for _ in range(per_party):
            members.append((party, np.asarray(centre) + rng.normal(0.0, spread, size=2)))
    return members


def smartvote_like(
    candidates_per_party: int = 4,
    questions_per_topic: int = 5,
    seed: int = 0,
    noise: float = 0.5,
) -> Dataset:
    """Binary candidate questionnaire over 12 topics, answered on the 4-point scale."""
    rng = np.random.default_rng(seed)
    topics = SMARTVOTE_TOPICS
    n_questions = len(topics) * questions_per_topic
    loadings = _loadings(rng, n_questions)
    questions = []
    for i in range(n_questions):
        topic = topics[i // questions_per_topic]
        questions.append({
            "id": f"sv{i + 1:02d}",
            "text": f"Should the state expand measure {i % questions_per_topic + 1} on {topic.lower()}?",
            "topic": topic,
        })
    likert = ("No", "Rather no", "Rather yes", "Yes")
    units = []
    for k, (party, position) in enumerate(_member_positions(rng, CH_PARTIES, candidates_per_party, 0.4)):
        score = loadings @ position + rng.normal(0.0, noise, size=n_questions)
        level = np.clip(np.digitize(score, (-0.8, 0.0, 0.8)), 0, 3)
        units.append({
            "unit_id": f"ch-{k + 1:03d}",
            "kind": "candidate",
            "country": "CH",
            "party_or_ideology": party,
            "responses": {q["id"]: likert[int(v)] for q, v in zip(questions, level)},
        })
    return dataset_from_json({
        "survey": "smartvote",
        "label_space": "binary",
        "questions": questions,
        "units": units,
    })


def wom_like(
    n_questions: int = 38,
    n_fixed_test: int = 30,
    seed: int = 0,
    noise: float = 0.4,
    neutral_band: float = 0.35,
    with_comments: bool = True,
) -> Dataset:
    """Ternary party statements plus a fixed external test block."""
    rng = np.random.default_rng(seed)
    total = n_questions + n_fixed_test
    loadings = _loadings(rng, total)
    questions = []
    for i in range(total):
        fixed = i >= n_questions
        questions.append({
            "id": f"eu{i - n_questions + 1:02d}" if fixed else f"wom{i + 1:02d}",
            "text": f"{'The European Union' if fixed else 'Germany'} should adopt policy {i + 1}.",
        })
    tokens = ("disagree", "neutral", "agree")
    units = []
    for party, centre in DE_PARTIES.items():
        score = loadings @ np.asarray(centre) + rng.normal(0.0, noise, size=total)
        level = np.digitize(score, (-neutral_band, neutral_band))
        unit = {
            "unit_id": "de-" + party.lower().replace("/", "-").replace(" ", "-"),
            "kind": "party",
            "country": "DE",
            "party_or_ideology": party,
            "responses": {q["id"]: tokens[int(v)] for q, v in zip(questions, level)},
        }
        if with_comments:
            unit["comments"] = {
                q["id"]: f"{party} {('rejects', 'has no fixed position on', 'supports')[int(v)]} this statement."
                for q, v in zip(questions[:n_questions:3], level[:n_questions:3])
            }
        units.append(unit)
    return dataset_from_json({
        "survey": "WoM",
        "label_space": "ternary",
        "questions": questions,
        "units": units,
        "fixed_test_ids": [q["id"] for q in questions[n_questions:]],
    })


def anes_like(
    respondents_per_ideology: int = 3,
    n_items: int = 79,
    scheme: str = "conservative",
    seed: int = 0,
    noise: float = 0.6,
) -> Dataset:
    """Ternary respondent items answered as 1-based option indexes."""
    rng = np.random.default_rng(seed)
    loadings = _loadings(rng, n_items)
    questions = []
    for i in range(n_items):
        if i < len(ANES_SPECIAL_ITEMS):
            item = dict(ANES_SPECIAL_ITEMS[i])
        else:
            item = {
                "text": f"Should the federal government do more on issue {i + 1}?",
                "raw_options": ["Always", "Most of the time", "About half the time", "Some of the time", "Never"],
                "scheme_maps": {"conservative": CONSERVATIVE_MAP, "aggressive": AGGRESSIVE_MAP},
            }
        item["id"] = f"an{i + 1:02d}"
        questions.append(item)
    units = []
    members = _member_positions(rng, US_IDEOLOGIES, respondents_per_ideology, 0.3)
    for k, (ideology, position) in enumerate(members):
        score = loadings @ position + rng.normal(0.0, noise, size=n_items)
        responses = {}
        for q, s in zip(questions, score):
            n_options = len(q["raw_options"])
            if n_options == 3:
                responses[q["id"]] = 1 if s > 0.5 else 2 if s < -0.5 else 3
            else:
                # option 1 is the strongest agreement on the standard items
                option = int(np.clip(np.digitize(-s, (-1.2, -0.4, 0.4, 1.2)), 0, 4)) + 1
                if q["scheme_maps"]["conservative"][0] == "No":
                    option = n_options + 1 - option
                responses[q["id"]] = option
        units.append({
            "unit_id": f"us-{k + 1:03d}",
            "kind": "respondent",
            "country": "US",
            "party_or_ideology": ideology,
            "responses": responses,
        })
    return dataset_from_json({
        "survey": "ANES",
        "label_space": "ternary",
        "recoding_scheme": scheme,
        "questions": questions,
        "units": units,
    })


PERSONA_ANSWERS = ("Yes", "No", "Yes", "Yes", "No", "No", "Yes", "No", "Yes", "No")


def persona(
    answers: Sequence[str] = PERSONA_ANSWERS,
    party: str = "SP",
    unit_id: str = "persona",
    extra_units: Optional[Dict[str, Sequence[str]]] = None,
) -> Dataset:
    """Single deterministic candidate with fixed binary answers; one topic per pair of questions."""
    questions = [
        {
            "id": f"p{i + 1:02d}",
            "text": f"Should the country adopt proposal number {i + 1}?",
            "topic": SMARTVOTE_TOPICS[i // 2 % len(SMARTVOTE_TOPICS)],
        }
        for i in range(len(answers))
    ]
    units = [{
        "unit_id": unit_id,
        "kind": "candidate",
        "country": "CH",
        "party_or_ideology": party,
        "responses": {q["id"]: a for q, a in zip(questions, answers)},
    }]
    for other_id, other_answers in (extra_units or {}).items():
        units.append({
            "unit_id": other_id,
            "kind": "candidate",
            "country": "CH",
            "party_or_ideology": party,
            "responses": {q["id"]: a for q, a in zip(questions, other_answers)},
        })
    return dataset_from_json({
        "survey": "smartvote",
        "label_space": "binary",
        "questions": questions,
        "units": units,
    })


SYNTHETIC_SURVEYS = {"smartvote": smartvote_like, "WoM": wom_like, "ANES": anes_like}


def synthetic_dataset(survey: str, seed: int = 0) -> Dataset:
    return SYNTHETIC_SURVEYS[survey](seed=seed)
