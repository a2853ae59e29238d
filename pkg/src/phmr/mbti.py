"""MBTI type system: parsing, axis decomposition, personality phrases, profiles."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple


class Axis(str, Enum):
    EI = "EI"
    SN = "SN"
    TF = "TF"
    JP = "JP"

    @property
    def poles(self) -> Tuple[str, str]:
        return self.value[0], self.value[1]

    @property
    def index(self) -> int:
        return AXES.index(self)


AXES: Tuple[Axis, ...] = (Axis.EI, Axis.SN, Axis.TF, Axis.JP)
EIGHT_LABELS: Tuple[str, ...] = ("E", "I", "S", "N", "T", "F", "J", "P")


class MBTIParseError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    axis: Axis
    pole: str

    def __post_init__(self):
        if self.pole not in self.axis.poles:
            raise ValueError(f"pole {self.pole!r} not on axis {self.axis.value}")

    @property
    def is_first(self) -> bool:
        return self.pole == self.axis.poles[0]


@dataclass(frozen=True, order=True)
class MBTIType:
    """One of the 16 types; ``poles`` is ordered EI, SN, TF, JP."""

    poles: Tuple[str, str, str, str]

    def __post_init__(self):
        if len(self.poles) != 4:
            raise ValueError("an MBTI type needs exactly four poles")
        for axis, pole in zip(AXES, self.poles):
            if pole not in axis.poles:
                raise ValueError(f"pole {pole!r} not on axis {axis.value}")

    @property
    def code(self) -> str:
        return "".join(self.poles)

    def pole(self, axis: Axis) -> str:
        return self.poles[Axis(axis).index]

    def first_pole_bits(self) -> Tuple[int, int, int, int]:
        """1 where the type sits on the first pole (E, S, T, J)."""
        return tuple(int(p == a.poles[0]) for a, p in zip(AXES, self.poles))

    def __str__(self) -> str:
        return self.code


def parse_mbti(text: str) -> MBTIType:
    s = text.strip().upper()
    if len(s) != 4:
        raise MBTIParseError(f"expected 4 letters, got {text!r}")
    for i, (axis, ch) in enumerate(zip(AXES, s)):
        if ch not in axis.poles:
            a, b = axis.poles
            raise MBTIParseError(
                f"invalid letter {ch!r} at position {i} (axis {axis.value}); expected {a} or {b}"
            )
    return MBTIType(tuple(s))


def format_mbti(t: MBTIType) -> str:
    return t.code


def decompose(t: MBTIType) -> List[Dimension]:
    return [Dimension(axis, pole) for axis, pole in zip(AXES, t.poles)]


def compose(dims: Sequence[Dimension]) -> MBTIType:
    if [d.axis for d in dims] != list(AXES):
        raise ValueError("dimensions must cover EI, SN, TF, JP in order")
    return MBTIType(tuple(d.pole for d in dims))


def from_first_pole_bits(bits: Sequence[int]) -> MBTIType:
    return MBTIType(tuple(a.poles[0] if b else a.poles[1] for a, b in zip(AXES, bits)))


def all_types() -> List[MBTIType]:
    return [MBTIType(p) for p in itertools.product(*(a.poles for a in AXES))]


def to_eight_labels(t: MBTIType) -> Tuple[int, ...]:
    """Indicator over (E, I, S, N, T, F, J, P)."""
    out = []
    for axis, pole in zip(AXES, t.poles):
        out.extend((int(pole == axis.poles[0]), int(pole == axis.poles[1])))
    return tuple(out)


def from_eight_labels(vec: Sequence[int]) -> MBTIType:
    if len(vec) != 8:
        raise ValueError("eight-label vector must have length 8")
    poles = []
    for k, axis in enumerate(AXES):
        a, b = int(vec[2 * k]), int(vec[2 * k + 1])
        if a + b != 1 or {a, b} != {0, 1}:
            raise ValueError(f"axis {axis.value} needs exactly one active pole, got {(a, b)}")
        poles.append(axis.poles[0] if a else axis.poles[1])
    return MBTIType(tuple(poles))


def personality_phrase(tag: str, t: MBTIType) -> List[str]:
    """Word sequence for a character: name tag followed by the whole type code.

    Whole-code tokens (``"esfp"``) are used, not per-letter tokens.
    """
    return [tag.lower(), t.code.lower()]


class PersonalityProfile(Mapping[str, MBTIType]):
    """Person-tag to MBTI type map."""

    def __init__(self, entries: Mapping[str, MBTIType] | Iterable[Tuple[str, MBTIType]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: Dict[str, MBTIType] = {}
        for tag, t in items:
            if not isinstance(tag, str) or not tag:
                raise ValueError(f"invalid person tag {tag!r}")
            if tag in self._entries:
                raise ValueError(f"duplicate person tag {tag!r}")
            self._entries[tag] = t if isinstance(t, MBTIType) else parse_mbti(t)

    def __getitem__(self, tag: str) -> MBTIType:
        return self._entries[tag]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if isinstance(other, PersonalityProfile):
            return self._entries == other._entries
        return NotImplemented

    def __repr__(self) -> str:
        return f"PersonalityProfile({self.to_dict()})"

    def restrict(self, tags: Iterable[str]) -> "PersonalityProfile":
        return PersonalityProfile((t, self._entries[t]) for t in tags)

    def to_dict(self) -> Dict[str, str]:
        return {tag: t.code for tag, t in self._entries.items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> "PersonalityProfile":
        return cls((tag, parse_mbti(code)) for tag, code in d.items())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "PersonalityProfile":
        return cls.from_dict(json.loads(s))
