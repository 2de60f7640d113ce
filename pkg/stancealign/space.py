"""Two-component political space fitted on the candidate answer matrix.

Yes answers are coded 1 and No answers 0. Components are oriented so that the
mean Right-group candidate sits at positive x and the most conservative
party's candidates sit at negative y; when an anchor is missing the largest
absolute loading of the component is made positive instead.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import svd

from .errors import DecompositionError, DimensionError, UnsupportedOperationError
from .stances import Stance
from .surveys import GROUP_ORDER, Dataset, Group, UnitProfile, normalize_party

logger = logging.getLogger(__name__)

# Most conservative party or ideology per country, anchoring the sign of the second axis.
CONSERVATIVE_ANCHORS = {"CH": "svp", "DE": "afd", "US": "extremely conservative"}

_RANK_TOLERANCE = 1e-10

Point = Tuple[float, float]


def stance_value(stance: Optional[Stance]) -> float:
    """Yes 1, No 0; an unresolved prediction sits halfway."""
    if stance is Stance.YES:
        return 1.0
    if stance is Stance.NO:
        return 0.0
    if stance is None:
        return 0.5
    raise UnsupportedOperationError("Neutral answers have no position in the binary answer space")


@dataclass(frozen=True)
class AnswerMatrix:
    unit_ids: Tuple[str, ...]
    question_ids: Tuple[str, ...]
    values: np.ndarray
    groups: Tuple[Group, ...] = ()
    parties: Tuple[str, ...] = ()
    country: Optional[str] = None
    excluded: Tuple[str, ...] = ()

    @classmethod
    def from_dataset(cls, dataset: Dataset, question_ids: Optional[Sequence[str]] = None) -> "AnswerMatrix":
        if not dataset.label_space.is_binary:
            raise UnsupportedOperationError("The political space is fitted on binary answers only")
        question_ids = list(question_ids) if question_ids is not None else dataset.question_ids
        rows, kept, excluded = [], [], []
        for unit in dataset.units:
            if len(unit.answered(question_ids)) < len(question_ids):
                excluded.append(unit.unit_id)
                continue
            rows.append([stance_value(unit.responses[q]) for q in question_ids])
            kept.append(unit)
        if excluded:
            logger.info("Excluded %d units with incomplete answers from the answer matrix", len(excluded))
        return cls(
            unit_ids=tuple(u.unit_id for u in kept),
            question_ids=tuple(question_ids),
            values=np.asarray(rows, dtype=float).reshape(len(rows), len(question_ids)),
            groups=tuple(u.group for u in kept),
            parties=tuple(u.party_or_ideology for u in kept),
            country=dataset.country,
            excluded=tuple(excluded),
        )


@dataclass(frozen=True)
class SpaceModel:
    column_means: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_ratio: np.ndarray
    question_ids: Tuple[str, ...] = field(default=())

    def to_json(self) -> dict:
        return {
            "question_ids": list(self.question_ids),
            "column_means": self.column_means.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "explained_ratio": self.explained_ratio.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SpaceModel":
        return cls(
            column_means=np.asarray(data["column_means"], dtype=float),
            components=np.asarray(data["components"], dtype=float),
            explained_variance=np.asarray(data["explained_variance"], dtype=float),
            explained_ratio=np.asarray(data["explained_ratio"], dtype=float),
            question_ids=tuple(data.get("question_ids", ())),
        )


def _orient(component: np.ndarray, scores: np.ndarray, mask: np.ndarray, want_positive: bool) -> np.ndarray:
    if mask.any():
        anchor = float(scores[mask].mean())
        if abs(anchor) > _RANK_TOLERANCE:
            return component if (anchor > 0) == want_positive else -component
    return component if component[np.argmax(np.abs(component))] > 0 else -component


def fit_space(matrix: AnswerMatrix) -> SpaceModel:
    n_rows, n_cols = matrix.values.shape
    if n_rows < 3 or n_cols < 2:
        raise DimensionError(f"Need at least 3 rows and 2 columns, got {n_rows}x{n_cols}")
    column_means = matrix.values.mean(axis=0)
    centered = matrix.values - column_means
    _, singular, vt = svd(centered, full_matrices=False)
    if singular[0] <= _RANK_TOLERANCE:
        raise DecompositionError("Answer matrix has rank 0; every row is identical")
    if singular[1] <= _RANK_TOLERANCE:
        logger.warning("Answer matrix has rank 1; the second component carries no variance")

    components = vt[:2].copy()
    scores = centered @ components.T
    groups = np.asarray([g is Group.RIGHT for g in matrix.groups], dtype=bool)
    if len(groups) != n_rows:
        groups = np.zeros(n_rows, dtype=bool)
    components[0] = _orient(components[0], scores[:, 0], groups, want_positive=True)

    anchor = CONSERVATIVE_ANCHORS.get(matrix.country or "")
    conservative = np.asarray(
        [anchor is not None and normalize_party(matrix.country, p) == anchor for p in matrix.parties], dtype=bool,
    )
    if len(conservative) != n_rows:
        conservative = np.zeros(n_rows, dtype=bool)
    components[1] = _orient(components[1], scores[:, 1], conservative, want_positive=False)

    variance = singular ** 2
    model = SpaceModel(
        column_means=column_means,
        components=components,
        explained_variance=variance[:2] / (n_rows - 1),
        explained_ratio=variance[:2] / variance.sum(),
        question_ids=matrix.question_ids,
    )
    logger.info("Fitted political space: explained variance ratio %s", np.round(model.explained_ratio, 4).tolist())
    return model


def project(model: SpaceModel, answers: Sequence[float]) -> Point:
    vector = np.asarray(answers, dtype=float)
    if vector.shape != model.column_means.shape:
        raise DimensionError(f"Expected {len(model.column_means)} answers, got {vector.shape}")
    x, y = (vector - model.column_means) @ model.components.T
    return float(x), float(y)


def agent_vector(
    unit: UnitProfile,
    question_ids: Sequence[str],
    test_predictions: Mapping[str, Optional[Stance]],
) -> np.ndarray:
    """Ground-truth answers with the test questions replaced by the agent's predictions."""
    return np.asarray([
        stance_value(test_predictions[q]) if q in test_predictions else stance_value(unit.responses[q])
        for q in question_ids
    ])


def displacement_vectors(
    pairs: Sequence[Tuple[Point, Point, Group]],
    groups: Sequence[Group] = GROUP_ORDER,
) -> Dict[Group, Point]:
    """Mean (agent - human) shift per group; groups without pairs are omitted."""
    shifts: Dict[Group, List[np.ndarray]] = {}
    for human, agent, group in pairs:
        shifts.setdefault(group, []).append(np.subtract(agent, human))
    result = {}
    for group in groups:
        if group not in shifts:
            logger.warning("No positions for group %s; omitting its displacement", group.value)
            continue
        dx, dy = np.mean(shifts[group], axis=0)
        result[group] = (float(dx), float(dy))
    return result


def inversion_offset(model: SpaceModel) -> Point:
    """Constant c with project(1 - v) + project(v) = c for every answer vector v."""
    x, y = (1.0 - 2.0 * model.column_means) @ model.components.T
    return float(x), float(y)


def inversion_reflection_check(model: SpaceModel, vectors: Sequence[Sequence[float]]) -> float:
    offset = np.asarray(inversion_offset(model))
    deviation = 0.0
    for v in vectors:
        v = np.asarray(v, dtype=float)
        total = np.add(project(model, v), project(model, 1.0 - v))
        deviation = max(deviation, float(np.max(np.abs(total - offset))))
    return deviation
