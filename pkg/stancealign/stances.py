from enum import Enum
from typing import Iterable, Optional, Tuple

from .errors import RecodeError


class Stance(str, Enum):
    YES = "Yes"
    NO = "No"
    NEUTRAL = "Neutral"

    @property
    def letter(self) -> str:
        return _LETTERS[self]

    @property
    def code(self) -> str:
        """Legend entry as requested by the system prompt, e.g. ``A) Yes``."""
        return f"{self.letter}) {self.value}"

    def inverted(self) -> "Stance":
        if self is Stance.NEUTRAL:
            raise RecodeError("Neutral has no inverse stance")
        return Stance.NO if self is Stance.YES else Stance.YES

    @classmethod
    def from_letter(cls, letter: str) -> "Stance":
        try:
            return _BY_LETTER[letter.strip().upper()]
        except KeyError:
            raise RecodeError(f"Unknown stance letter: {letter!r}")

    @classmethod
    def parse(cls, token: str) -> "Stance":
        """Canonical label or letter code, case-insensitive."""
        cleaned = str(token).strip()
        for stance in cls:
            if cleaned.lower() == stance.value.lower():
                return stance
        if cleaned.upper() in _BY_LETTER:
            return _BY_LETTER[cleaned.upper()]
        raise RecodeError(f"Unknown stance token: {token!r}")


_LETTERS = {Stance.YES: "A", Stance.NO: "B", Stance.NEUTRAL: "C"}
_BY_LETTER = {letter: stance for stance, letter in _LETTERS.items()}

# Canonical order, also used to break majority ties.
CANONICAL_ORDER: Tuple[Stance, ...] = (Stance.YES, Stance.NO, Stance.NEUTRAL)


class LabelSpace:
    def __init__(self, stances: Iterable[Stance]):
        members = set(stances)
        self.stances: Tuple[Stance, ...] = tuple(s for s in CANONICAL_ORDER if s in members)
        if self.stances not in ((Stance.YES, Stance.NO), CANONICAL_ORDER):
            raise RecodeError(f"Label space must be {{Yes, No}} or {{Yes, No, Neutral}}, got {members}")

    @property
    def name(self) -> str:
        return "binary" if self.is_binary else "ternary"

    @property
    def is_binary(self) -> bool:
        return len(self.stances) == 2

    def __contains__(self, stance: object) -> bool:
        return stance in self.stances

    def __iter__(self):
        return iter(self.stances)

    def __len__(self) -> int:
        return len(self.stances)

    def index(self, stance: Stance) -> int:
        return self.stances.index(stance)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LabelSpace) and other.stances == self.stances

    def __hash__(self) -> int:
        return hash(self.stances)

    def __repr__(self) -> str:
        return f"LabelSpace({', '.join(s.value for s in self.stances)})"

    def to_json(self) -> list:
        return [s.value for s in self.stances]

    @classmethod
    def from_json(cls, value) -> "LabelSpace":
        if isinstance(value, str):
            if value.lower() == "binary":
                return BINARY
            if value.lower() == "ternary":
                return TERNARY
            raise RecodeError(f"Unknown label space: {value!r}")
        return cls(Stance.parse(v) for v in value)


BINARY = LabelSpace((Stance.YES, Stance.NO))
TERNARY = LabelSpace(CANONICAL_ORDER)


def stance_or_none(value: Optional[str]) -> Optional[Stance]:
    return None if value is None else Stance.parse(value)
