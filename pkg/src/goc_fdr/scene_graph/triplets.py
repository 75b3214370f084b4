"""Triplets, scene graphs and their compact uplink text encoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

STANDING_ON = "standing on"
GRASPED_BY = "grasped by"
NEXT_TO = "next to"
INSIDE = "inside"
NONE = "none"

DEFAULT_RELATIONS = (STANDING_ON, GRASPED_BY, NEXT_TO, INSIDE, NONE)

# Relations whose two roles are interchangeable. Their triplets are stored
# with captions in lexicographic order; the asymmetric ones keep
# (subject, relation, reference), e.g. (parcel, grasped by, robot).
SYMMETRIC = frozenset({NEXT_TO, NONE})


class SceneGraphParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class RelationVocabulary:
    labels: tuple[str, ...] = DEFAULT_RELATIONS

    def __post_init__(self) -> None:
        if NONE not in self.labels:
            raise ValueError("relation vocabulary must contain 'none'")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("relation labels must be unique")

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True, order=True)
class Triplet:
    caption_m: str
    relation: str
    caption_n: str

    def __post_init__(self) -> None:
        if self.caption_m == self.caption_n:
            raise ValueError(f"self-relation on {self.caption_m!r}")
        for cap in (self.caption_m, self.caption_n):
            if not cap or "|" in cap or "\n" in cap or cap != cap.strip():
                raise ValueError(f"invalid caption {cap!r}")
        if self.relation in SYMMETRIC and self.caption_m > self.caption_n:
            raise ValueError("symmetric triplets must be stored in canonical order; use Triplet.make")

    @classmethod
    def make(cls, a: str, relation: str, b: str) -> "Triplet":
        if relation in SYMMETRIC and a > b:
            a, b = b, a
        return cls(a, relation, b)

    @property
    def pair(self) -> frozenset:
        return frozenset((self.caption_m, self.caption_n))

    def involves(self, caption: str) -> bool:
        return caption == self.caption_m or caption == self.caption_n

    def other(self, caption: str) -> str:
        return self.caption_n if caption == self.caption_m else self.caption_m

    def line(self) -> str:
        return f"{self.caption_m}|{self.relation}|{self.caption_n}"

    def __str__(self) -> str:
        return f"({self.caption_m}, {self.relation}, {self.caption_n})"


@dataclass(frozen=True)
class SceneGraph3D:
    frame_index: int = 0
    triplets: frozenset = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "triplets", frozenset(self.triplets))
        pairs = [t.pair for t in self.triplets]
        if len(set(pairs)) != len(pairs):
            raise ValueError("scene graph holds more than one triplet for an object pair")

    def __contains__(self, t: Triplet) -> bool:
        return t in self.triplets

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self):
        return iter(sorted(self.triplets))

    def captions(self) -> set[str]:
        out = set()
        for t in self.triplets:
            out.add(t.caption_m)
            out.add(t.caption_n)
        return out

    def relation_of(self, a: str, b: str) -> str | None:
        key = frozenset((a, b))
        for t in self.triplets:
            if t.pair == key:
                return t.relation
        return None


def serialize_sg(sg: SceneGraph3D) -> bytes:
    """Canonical UTF-8 text: one sorted ``m|relation|n`` line per triplet."""
    lines = sorted(t.line() for t in sg.triplets)
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")


def deserialize_sg(data: bytes, frame_index: int = 0,
                   vocabulary: RelationVocabulary | None = None) -> SceneGraph3D:
    vocabulary = vocabulary or RelationVocabulary()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SceneGraphParseError(1, f"not UTF-8: {exc}") from None
    triplets = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if line == "":
            if lineno == text.count("\n") + 1:
                break  # trailing newline
            raise SceneGraphParseError(lineno, "empty line")
        parts = line.split("|")
        if len(parts) != 3:
            raise SceneGraphParseError(lineno, f"expected 'm|relation|n', got {line!r}")
        m, rel, n = parts
        if rel not in vocabulary:
            raise SceneGraphParseError(lineno, f"unknown relation {rel!r}")
        try:
            t = Triplet(m, rel, n)
        except ValueError as exc:
            raise SceneGraphParseError(lineno, str(exc)) from None
        triplets.append(t)
    try:
        return SceneGraph3D(frame_index, frozenset(triplets))
    except ValueError as exc:
        raise SceneGraphParseError(len(triplets), str(exc)) from None


def sg_payload_bits(sg: SceneGraph3D) -> int:
    return 8 * len(serialize_sg(sg))


def triplets_of(items: Iterable[tuple[str, str, str]]) -> frozenset:
    return frozenset(Triplet.make(a, r, b) for a, r, b in items)
