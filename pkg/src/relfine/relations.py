"""Symbolic spatial-relation triplets and the calibration pipeline.

A triplet <subject, relation, object> states "subject is positioned at
<relation> of object". Calibration augments a raw triplet set with the
reverse of every statement, validates each survivor with a yes/no oracle in
both directions, then detects and resolves contradictory pairs. The oracle
abstraction stands in for whatever answered the original spatial questions;
two implementations ship here: one replaying a recorded answer table and one
derived from label-map geometry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Literal, Mapping, Protocol, Sequence

import numpy as np

from .errors import FormatError, UnknownCategoryError
from .grid import LabelMap

Stage = Literal["initial", "bidirectional", "validated", "resolved"]
HoldsAnswer = Literal["yes", "no", "unknown"]
ChooseAnswer = Literal["first", "second", "neither"]

STAGES: tuple[Stage, ...] = ("initial", "bidirectional", "validated", "resolved")

#: Default name of the category excluded from constraints.
BACKGROUND = "background"


class Relation(str, Enum):
    """The four fundamental positional relations (rows grow downward)."""

    ABOVE = "above"
    BELOW = "below"
    LEFT = "left"
    RIGHT = "right"

    @property
    def axis(self) -> Literal["row", "col"]:
        return "row" if self in (Relation.ABOVE, Relation.BELOW) else "col"


_OPPOSITE = {
    Relation.ABOVE: Relation.BELOW,
    Relation.BELOW: Relation.ABOVE,
    Relation.LEFT: Relation.RIGHT,
    Relation.RIGHT: Relation.LEFT,
}


def opposite(relation: Relation) -> Relation:
    """Above <-> Below, Left <-> Right; an involution."""
    return _OPPOSITE[relation]


def parse_relation(name: str) -> Relation:
    try:
        return Relation(name)
    except ValueError:
        valid = ", ".join(r.value for r in Relation)
        raise FormatError(f"unknown relation {name!r}, expected one of: {valid}") from None


TripletKey = tuple[str, Relation, str]


@dataclass(frozen=True)
class SpatialTriplet:
    """One spatial statement plus the pipeline stage that last affirmed it."""

    subject: str
    relation: Relation
    object: str
    stage: Stage = "initial"

    def __post_init__(self) -> None:
        if self.subject == self.object:
            raise FormatError(f"triplet subject and object must differ, both are {self.subject!r}")
        if self.stage not in STAGES:
            raise FormatError(f"unknown stage {self.stage!r}")

    @property
    def key(self) -> TripletKey:
        """Identity of the statement itself, ignoring provenance."""
        return (self.subject, self.relation, self.object)

    def reversed(self) -> SpatialTriplet:
        """The equivalent statement seen from the object's side."""
        return SpatialTriplet(self.object, opposite(self.relation), self.subject, stage=self.stage)

    def __str__(self) -> str:
        return f"<{self.subject}, {self.relation.value}, {self.object}>"


@dataclass(frozen=True)
class TripletSet:
    """Ordered, duplicate-free collection of triplets over a category roster."""

    triplets: tuple[SpatialTriplet, ...]
    categories: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "triplets", tuple(self.triplets))
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(set(self.categories)) != len(self.categories):
            raise FormatError("category roster contains duplicates")
        roster = set(self.categories)
        seen: set[TripletKey] = set()
        for t in self.triplets:
            if t.key in seen:
                raise FormatError(f"duplicate triplet {t}")
            seen.add(t.key)
            for name in (t.subject, t.object):
                if name not in roster:
                    raise UnknownCategoryError(f"triplet {t} names {name!r}, not in roster")

    def __iter__(self) -> Iterator[SpatialTriplet]:
        return iter(self.triplets)

    def __len__(self) -> int:
        return len(self.triplets)

    def keys(self) -> frozenset[TripletKey]:
        return frozenset(t.key for t in self.triplets)

    def with_triplets(self, triplets: Sequence[SpatialTriplet]) -> TripletSet:
        return TripletSet(tuple(triplets), self.categories)


def empty_triplet_set(categories: Sequence[str]) -> TripletSet:
    return TripletSet((), tuple(categories))


class RelationOracle(Protocol):
    """Answers the two question shapes the calibration pipeline asks."""

    def holds(self, subject: str, relation: Relation, object: str) -> HoldsAnswer:
        """Does '<subject> is at <relation> of <object>' hold?"""
        ...

    def choose(
        self, subject: str, first: Relation, second: Relation, object: str
    ) -> ChooseAnswer:
        """Which of two candidate relations between subject and object is right?"""
        ...


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def augment_bidirectional(triplets: TripletSet) -> TripletSet:
    """Add the reverse of every statement unless that exact triplet exists.

    Originals keep their stage; additions are tagged "bidirectional". The
    result is duplicate-free and applying this twice changes nothing.
    """
    present = set(t.key for t in triplets)
    out = list(triplets.triplets)
    for t in triplets:
        rev = replace(t.reversed(), stage="bidirectional")
        if rev.key not in present:
            present.add(rev.key)
            out.append(rev)
    return triplets.with_triplets(out)


def validate_polar(triplets: TripletSet, oracle: RelationOracle) -> TripletSet:
    """Keep a triplet only if both it and its reflection are affirmed.

    The primary question asks about the statement as written, the reflection
    asks about its reverse; anything short of a "yes" on both (including
    "unknown") drops the triplet.
    """
    kept = []
    for t in triplets:
        primary = oracle.holds(t.subject, t.relation, t.object)
        reflection = oracle.holds(t.object, opposite(t.relation), t.subject)
        if primary == "yes" and reflection == "yes":
            kept.append(replace(t, stage="validated"))
    return triplets.with_triplets(kept)


ContradictionKind = Literal["cyclic", "directional"]


@dataclass(frozen=True)
class ContradictionPair:
    """Two mutually inconsistent triplets and the pattern they match.

    Cyclic: both orderings claim the same relation (<a,r,b> and <b,r,a>).
    Directional: one ordering claims a relation and its opposite
    (<a,r,b> and <a,opp(r),b>). The complementary pair <a,r,b> / <b,opp(r),a>
    is consistent and never reported.
    """

    first: SpatialTriplet
    second: SpatialTriplet
    kind: ContradictionKind


def detect_contradictions(triplets: TripletSet) -> list[ContradictionPair]:
    """Scan all unordered pairs for the two contradiction patterns."""
    items = triplets.triplets
    pairs: list[ContradictionPair] = []
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            a, b = items[i], items[j]
            if a.subject == b.object and a.object == b.subject and a.relation == b.relation:
                pairs.append(ContradictionPair(a, b, "cyclic"))
            elif (
                a.subject == b.subject
                and a.object == b.object
                and a.relation == opposite(b.relation)
            ):
                pairs.append(ContradictionPair(a, b, "directional"))
    return pairs


def resolve_contradictions(
    triplets: TripletSet,
    pairs: Sequence[ContradictionPair],
    oracle: RelationOracle,
) -> TripletSet:
    """Ask the oracle to settle each contradictory pair.

    Each pair becomes one two-option question posed from the first triplet's
    perspective (its own relation versus the opposite, which is equivalent to
    the second triplet's claim). "first" keeps the first and drops the second,
    "second" the converse, "neither" discards both. A triplet dropped while
    settling one pair stays dropped even if another pair would keep it.
    """
    dropped: set[TripletKey] = set()
    chosen: set[TripletKey] = set()
    for pair in pairs:
        answer = oracle.choose(
            pair.first.subject, pair.first.relation, opposite(pair.first.relation), pair.first.object
        )
        if answer == "first":
            chosen.add(pair.first.key)
            dropped.add(pair.second.key)
        elif answer == "second":
            chosen.add(pair.second.key)
            dropped.add(pair.first.key)
        else:
            dropped.add(pair.first.key)
            dropped.add(pair.second.key)

    kept = [
        replace(t, stage="resolved") if t.key in chosen and t.key not in dropped else t
        for t in triplets
        if t.key not in dropped
    ]
    result = triplets.with_triplets(kept)

    # Every detected pair loses at least one member, so this scan comes back
    # empty; dropping both members of anything left keeps the guarantee even
    # if the pair list was stale.
    leftover = detect_contradictions(result)
    if leftover:
        stale = {p.first.key for p in leftover} | {p.second.key for p in leftover}
        result = result.with_triplets([t for t in result if t.key not in stale])
    return result


@dataclass(frozen=True)
class CalibrationOptions:
    drop_background: bool = True
    background_name: str = BACKGROUND


@dataclass(frozen=True)
class CalibrationAudit:
    """Per-stage counts recorded while calibrating one triplet set."""

    initial: int
    background_dropped: int
    augmented: int
    validated: int
    contradiction_pairs: int
    resolution_dropped: int
    final: int

    def to_dict(self) -> dict[str, int]:
        return {
            "initial": self.initial,
            "background_dropped": self.background_dropped,
            "augmented": self.augmented,
            "validated": self.validated,
            "contradiction_pairs": self.contradiction_pairs,
            "resolution_dropped": self.resolution_dropped,
            "final": self.final,
        }


@dataclass(frozen=True)
class CalibrationResult:
    triplets: TripletSet
    audit: CalibrationAudit


def calibrate(
    initial: TripletSet,
    oracle: RelationOracle,
    opts: CalibrationOptions | None = None,
) -> CalibrationResult:
    """Run the full pipeline: augment, validate, detect and resolve.

    The returned set is contradiction-free and a subset of the augmented
    input; the audit carries the per-stage counts.
    """
    opts = opts or CalibrationOptions()
    work = initial
    background_dropped = 0
    if opts.drop_background:
        kept = [t for t in work if opts.background_name not in (t.subject, t.object)]
        background_dropped = len(work) - len(kept)
        work = work.with_triplets(kept)

    augmented = augment_bidirectional(work)
    validated = validate_polar(augmented, oracle)
    pairs = detect_contradictions(validated)
    resolved = resolve_contradictions(validated, pairs, oracle)

    audit = CalibrationAudit(
        initial=len(initial),
        background_dropped=background_dropped,
        augmented=len(augmented),
        validated=len(validated),
        contradiction_pairs=len(pairs),
        resolution_dropped=len(validated) - len(resolved),
        final=len(resolved),
    )
    return CalibrationResult(triplets=resolved, audit=audit)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


class GeometricOracle:
    """Answers from label-map geometry: centroid comparison per axis.

    holds(s, r, o) is "yes" iff both categories occupy at least one pixel and
    the centroid of s lies strictly on the r side of o's centroid (columns
    for left/right, rows for above/below, rows growing downward).
    """

    def __init__(self, labels: LabelMap, roster: Sequence[str]):
        self._centroids: dict[str, tuple[float, float]] = {}
        for index, name in enumerate(roster):
            mask = labels.labels == index
            if mask.any():
                rows, cols = np.nonzero(mask)
                self._centroids[name] = (float(rows.mean()), float(cols.mean()))

    def holds(self, subject: str, relation: Relation, object: str) -> HoldsAnswer:
        if subject not in self._centroids or object not in self._centroids:
            return "no"
        s_row, s_col = self._centroids[subject]
        o_row, o_col = self._centroids[object]
        satisfied = {
            Relation.ABOVE: s_row < o_row,
            Relation.BELOW: s_row > o_row,
            Relation.LEFT: s_col < o_col,
            Relation.RIGHT: s_col > o_col,
        }[relation]
        return "yes" if satisfied else "no"

    def choose(self, subject: str, first: Relation, second: Relation, object: str) -> ChooseAnswer:
        if self.holds(subject, first, object) == "yes":
            return "first"
        if self.holds(subject, second, object) == "yes":
            return "second"
        return "neither"


def geometric_oracle(labels: LabelMap, roster: Sequence[str]) -> GeometricOracle:
    if labels.num_categories != len(roster):
        raise UnknownCategoryError(
            f"label map declares {labels.num_categories} categories, roster has {len(roster)}"
        )
    return GeometricOracle(labels, roster)


HoldsTable = Mapping[tuple[str, Relation, str], HoldsAnswer]
ChooseTable = Mapping[tuple[str, Relation, Relation, str], ChooseAnswer]


class ScriptedOracle:
    """Replays a recorded answer table; unrecorded queries answer unknown/neither."""

    def __init__(self, holds: HoldsTable, choose: ChooseTable):
        self._holds = dict(holds)
        self._choose = dict(choose)

    def holds(self, subject: str, relation: Relation, object: str) -> HoldsAnswer:
        return self._holds.get((subject, relation, object), "unknown")

    def choose(self, subject: str, first: Relation, second: Relation, object: str) -> ChooseAnswer:
        return self._choose.get((subject, first, second, object), "neither")


def scripted_oracle(holds: HoldsTable, choose: ChooseTable | None = None) -> ScriptedOracle:
    return ScriptedOracle(holds, choose or {})


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------
#
# Triplet files: {"categories": ["cat", ...],
#                 "triplets": [{"subject": "cat", "relation": "right",
#                               "object": "person", "stage": "initial"}, ...]}
# Oracle files:  {"holds": [{"s": "...", "r": "...", "o": "...", "a": "yes"}],
#                 "choose": [{"s": "...", "r1": "...", "r2": "...", "o": "...",
#                             "a": "first"}]}


def _load_json_doc(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: expected a JSON object at top level")
    return doc


def load_triplets(path: str | Path, swap_args: bool = False) -> TripletSet:
    """Load a triplet set; swap_args flips subject and object on every entry.

    The swap accommodates recorded logs whose argument order is inverted
    relative to the convention used here. Exact duplicates (same subject,
    relation, object) collapse to one entry keeping the earliest stage tag.
    """
    doc = _load_json_doc(path)
    unknown = set(doc) - {"categories", "triplets"}
    if unknown:
        raise FormatError(f"{path}: unknown keys {sorted(unknown)}")
    categories = doc.get("categories")
    if not isinstance(categories, list) or not all(isinstance(c, str) for c in categories):
        raise FormatError(f"{path}: 'categories' must be a list of strings")
    entries = doc.get("triplets", [])
    if not isinstance(entries, list):
        raise FormatError(f"{path}: 'triplets' must be a list")

    triplets = []
    for index, entry in enumerate(entries):
        where = f"{path}: triplets[{index}]"
        if not isinstance(entry, dict):
            raise FormatError(f"{where}: expected an object")
        bad = set(entry) - {"subject", "relation", "object", "stage"}
        if bad:
            raise FormatError(f"{where}: unknown keys {sorted(bad)}")
        try:
            subject = entry["subject"]
            relation = parse_relation(entry["relation"])
            obj = entry["object"]
        except KeyError as exc:
            raise FormatError(f"{where}: missing key {exc.args[0]!r}") from None
        except FormatError as exc:
            raise FormatError(f"{where}: {exc}") from None
        stage = entry.get("stage", "initial")
        if stage not in STAGES:
            raise FormatError(f"{where}: unknown stage {stage!r}")
        if swap_args:
            subject, obj = obj, subject
        try:
            triplets.append(SpatialTriplet(subject, relation, obj, stage=stage))
        except FormatError as exc:
            raise FormatError(f"{where}: {exc}") from None

    collapsed: dict[TripletKey, SpatialTriplet] = {}
    for t in triplets:
        kept = collapsed.get(t.key)
        if kept is None or STAGES.index(t.stage) < STAGES.index(kept.stage):
            collapsed[t.key] = t

    try:
        return TripletSet(tuple(collapsed.values()), tuple(categories))
    except (FormatError, UnknownCategoryError) as exc:
        raise type(exc)(f"{path}: {exc}") from None


def save_triplets(path: str | Path, triplets: TripletSet) -> None:
    doc = {
        "categories": list(triplets.categories),
        "triplets": [
            {"subject": t.subject, "relation": t.relation.value, "object": t.object, "stage": t.stage}
            for t in triplets
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_scripted_oracle(path: str | Path) -> ScriptedOracle:
    doc = _load_json_doc(path)
    unknown = set(doc) - {"holds", "choose"}
    if unknown:
        raise FormatError(f"{path}: unknown keys {sorted(unknown)}")

    holds: dict[tuple[str, Relation, str], HoldsAnswer] = {}
    for index, entry in enumerate(doc.get("holds", [])):
        where = f"{path}: holds[{index}]"
        if not isinstance(entry, dict) or set(entry) != {"s", "r", "o", "a"}:
            raise FormatError(f"{where}: expected keys s, r, o, a")
        if entry["a"] not in ("yes", "no", "unknown"):
            raise FormatError(f"{where}: answer must be yes/no/unknown, got {entry['a']!r}")
        try:
            key = (entry["s"], parse_relation(entry["r"]), entry["o"])
        except FormatError as exc:
            raise FormatError(f"{where}: {exc}") from None
        holds[key] = entry["a"]

    choose: dict[tuple[str, Relation, Relation, str], ChooseAnswer] = {}
    for index, entry in enumerate(doc.get("choose", [])):
        where = f"{path}: choose[{index}]"
        if not isinstance(entry, dict) or set(entry) != {"s", "r1", "r2", "o", "a"}:
            raise FormatError(f"{where}: expected keys s, r1, r2, o, a")
        if entry["a"] not in ("first", "second", "neither"):
            raise FormatError(f"{where}: answer must be first/second/neither, got {entry['a']!r}")
        try:
            key = (entry["s"], parse_relation(entry["r1"]), parse_relation(entry["r2"]), entry["o"])
        except FormatError as exc:
            raise FormatError(f"{where}: {exc}") from None
        choose[key] = entry["a"]

    return ScriptedOracle(holds, choose)
