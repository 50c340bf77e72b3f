"""Synthetic desk-scale scenes: known label maps, noisy maps, true triplets.

A scene paints axis-aligned rectangles over a background, derives the full
set of spatial triplets its geometry satisfies, then corrupts one-hot
probability maps with category confusion and Gaussian noise. Everything is
computed from an explicit seed, so scenes regenerate bit-identically.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, SceneSpecError
from .grid import LabelMap, ProbabilityMap, read_labels, read_rsgf, write_labels_pgm, write_rsgf
from .relations import (
    BACKGROUND,
    Relation,
    SpatialTriplet,
    TripletSet,
    geometric_oracle,
    load_triplets,
    save_triplets,
)

#: Readable, filename-safe names handed out by the random spec sampler.
CATEGORY_POOL = ("amber", "blue", "coral", "dune", "elm", "fern", "gold", "heath")

_SAFE_NAME = re.compile(r"[A-Za-z0-9_-]+")


@dataclass(frozen=True)
class Placement:
    """Half-open rectangle [row0, row1) x [col0, col1) painted for one category."""

    category: str
    row0: int
    col0: int
    row1: int
    col1: int


@dataclass(frozen=True)
class Confusion:
    """Symmetric probability-mass mixing between two categories' regions."""

    first: str
    second: str
    strength: float


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    placements: tuple[Placement, ...]
    noise_sigma: float = 0.0
    confusion: Confusion | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "placements", tuple(self.placements))
        if self.height < 1 or self.width < 1:
            raise SceneSpecError(f"scene dimensions must be positive, got {self.height}x{self.width}")
        if not self.placements:
            raise SceneSpecError("scene needs at least one placement")
        if self.noise_sigma < 0:
            raise SceneSpecError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        seen = set()
        for p in self.placements:
            if p.category == BACKGROUND:
                raise SceneSpecError("placements may not use the background category")
            if p.category in seen:
                raise SceneSpecError(f"category {p.category!r} placed more than once")
            seen.add(p.category)
            if not (0 <= p.row0 < p.row1 <= self.height and 0 <= p.col0 < p.col1 <= self.width):
                raise SceneSpecError(
                    f"placement for {p.category!r} out of bounds: "
                    f"rows [{p.row0},{p.row1}) cols [{p.col0},{p.col1}) "
                    f"in a {self.height}x{self.width} scene"
                )
        if self.confusion is not None:
            c = self.confusion
            if not 0.0 <= c.strength <= 1.0:
                raise SceneSpecError(f"confusion strength must lie in [0, 1], got {c.strength}")
            if c.first == c.second:
                raise SceneSpecError("confusion needs two distinct categories")
            for name in (c.first, c.second):
                if name not in seen:
                    raise SceneSpecError(f"confusion names unplaced category {name!r}")

    @property
    def categories(self) -> tuple[str, ...]:
        """Roster with background at index 0, then placements in order."""
        return (BACKGROUND, *(p.category for p in self.placements))


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    gt_labels: LabelMap
    categories: tuple[str, ...]
    init_probs: dict[str, ProbabilityMap]
    gt_triplets: TripletSet


def derive_gt_triplets(
    labels: LabelMap, roster: Sequence[str], background: str | None = BACKGROUND
) -> TripletSet:
    """Every triplet the label map's centroids satisfy, excluding background."""
    oracle = geometric_oracle(labels, roster)
    triplets = []
    for subject in roster:
        for obj in roster:
            if subject == obj or background in (subject, obj):
                continue
            for relation in Relation:
                if oracle.holds(subject, relation, obj) == "yes":
                    triplets.append(SpatialTriplet(subject, relation, obj, stage="initial"))
    return TripletSet(tuple(triplets), tuple(roster))


def _placement_mask(spec: SceneSpec, category: str) -> np.ndarray:
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    for p in spec.placements:
        if p.category == category:
            mask[p.row0 : p.row1, p.col0 : p.col1] = True
    return mask


def generate_scene(spec: SceneSpec) -> Scene:
    """Paint labels, derive triplets, and corrupt one-hot maps into init_probs.

    Placements paint in order (later ones overwrite). Confusion mixes mass
    between its two categories inside the union of both rectangles before
    noise is added; maps are then clamped to [0, 1] and renormalized per
    pixel.
    """
    roster = spec.categories
    labels_arr = np.zeros((spec.height, spec.width), dtype=np.int64)
    for index, p in enumerate(spec.placements, start=1):
        labels_arr[p.row0 : p.row1, p.col0 : p.col1] = index
    gt_labels = LabelMap(labels_arr, len(roster))

    probs = np.zeros((len(roster), spec.height, spec.width), dtype=np.float64)
    for index in range(len(roster)):
        probs[index] = labels_arr == index

    if spec.confusion is not None:
        c = spec.confusion
        i = roster.index(c.first)
        j = roster.index(c.second)
        region = _placement_mask(spec, c.first) | _placement_mask(spec, c.second)
        mixed_i = (1.0 - c.strength) * probs[i] + c.strength * probs[j]
        mixed_j = (1.0 - c.strength) * probs[j] + c.strength * probs[i]
        probs[i] = np.where(region, mixed_i, probs[i])
        probs[j] = np.where(region, mixed_j, probs[j])

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        probs = probs + rng.normal(0.0, spec.noise_sigma, probs.shape)

    probs = np.clip(probs, 0.0, 1.0)
    totals = probs.sum(axis=0, keepdims=True)
    uniform = np.full_like(probs, 1.0 / len(roster))
    probs = np.where(totals > 0.0, probs / np.where(totals > 0.0, totals, 1.0), uniform)

    init_probs = {name: ProbabilityMap(probs[index]) for index, name in enumerate(roster)}
    return Scene(
        spec=spec,
        gt_labels=gt_labels,
        categories=roster,
        init_probs=init_probs,
        gt_triplets=derive_gt_triplets(gt_labels, roster),
    )


def random_grid_spec(
    seed: int,
    n_categories: int = 3,
    height: int = 32,
    width: int = 32,
    noise_sigma: float = 0.15,
    confusion_strength: float | None = 0.5,
    min_extent: int = 4,
) -> SceneSpec:
    """Sample a band-aligned scene: one rectangle per category, laid out on a
    cell grid where every band shares its span.

    Rectangles in the same band column share their column span and ones in
    the same band row share their row span, so any two categories either
    have identical centroids on an axis (no triplet there) or fully disjoint
    extents (every pixel satisfies the derived triplet). That makes the
    derived triplets exactly satisfiable, not just satisfied on centroids.
    """
    if not 1 <= n_categories <= len(CATEGORY_POOL):
        raise SceneSpecError(f"n_categories must lie in [1, {len(CATEGORY_POOL)}]")
    rng = np.random.default_rng(seed)
    bands = int(np.ceil(np.sqrt(n_categories)))
    if height < bands * (min_extent + 1) or width < bands * (min_extent + 1):
        raise SceneSpecError(f"{height}x{width} too small for {bands}x{bands} bands")

    def spans(total: int) -> list[tuple[int, int]]:
        edges = [int(e) for e in np.linspace(0, total, bands + 1)]
        out = []
        for band_start, band_end in zip(edges[:-1], edges[1:]):
            room = band_end - band_start
            extent = int(rng.integers(min_extent, room))
            offset = int(rng.integers(0, room - extent + 1))
            out.append((band_start + offset, band_start + offset + extent))
        return out

    row_spans = spans(height)
    col_spans = spans(width)
    cells = [(i, j) for i in range(bands) for j in range(bands)]
    picks = rng.choice(len(cells), size=n_categories, replace=False)

    placements = []
    for name, pick in zip(CATEGORY_POOL, picks):
        i, j = cells[pick]
        (r0, r1), (c0, c1) = row_spans[i], col_spans[j]
        placements.append(Placement(name, r0, c0, r1, c1))

    confusion = None
    if confusion_strength is not None and n_categories >= 2:
        a, b = rng.choice(n_categories, size=2, replace=False)
        confusion = Confusion(placements[a].category, placements[b].category, confusion_strength)

    return SceneSpec(
        height=height,
        width=width,
        placements=tuple(placements),
        noise_sigma=noise_sigma,
        confusion=confusion,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Scene bundles on disk
# ---------------------------------------------------------------------------
#
# A bundle directory holds spec.json, gt_labels.pgm (P5), triplets.json, and
# probs/<category>.rsgf for every roster entry including background.


def spec_to_dict(spec: SceneSpec) -> dict:
    # int()/float() coercions keep numpy scalars out of the JSON encoder.
    return {
        "height": int(spec.height),
        "width": int(spec.width),
        "placements": [
            {
                "category": p.category,
                "row0": int(p.row0),
                "col0": int(p.col0),
                "row1": int(p.row1),
                "col1": int(p.col1),
            }
            for p in spec.placements
        ],
        "noise_sigma": float(spec.noise_sigma),
        "confusion": None
        if spec.confusion is None
        else {
            "first": spec.confusion.first,
            "second": spec.confusion.second,
            "strength": float(spec.confusion.strength),
        },
        "seed": int(spec.seed),
    }


def _require_keys(doc: dict, required: set[str], optional: set[str], where: str) -> None:
    missing = required - set(doc)
    if missing:
        raise SceneSpecError(f"{where}: missing keys {sorted(missing)}")
    unknown = set(doc) - required - optional
    if unknown:
        raise SceneSpecError(f"{where}: unknown keys {sorted(unknown)}")


def spec_from_dict(doc: dict, where: str = "scene spec") -> SceneSpec:
    _require_keys(doc, {"height", "width", "placements"}, {"noise_sigma", "confusion", "seed"}, where)
    placements = []
    for index, entry in enumerate(doc["placements"]):
        entry_where = f"{where}: placements[{index}]"
        if not isinstance(entry, dict):
            raise SceneSpecError(f"{entry_where}: expected an object")
        _require_keys(entry, {"category", "row0", "col0", "row1", "col1"}, set(), entry_where)
        placements.append(
            Placement(
                category=str(entry["category"]),
                row0=int(entry["row0"]),
                col0=int(entry["col0"]),
                row1=int(entry["row1"]),
                col1=int(entry["col1"]),
            )
        )
    confusion = None
    if doc.get("confusion") is not None:
        centry = doc["confusion"]
        _require_keys(centry, {"first", "second", "strength"}, set(), f"{where}: confusion")
        confusion = Confusion(str(centry["first"]), str(centry["second"]), float(centry["strength"]))
    try:
        return SceneSpec(
            height=int(doc["height"]),
            width=int(doc["width"]),
            placements=tuple(placements),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            confusion=confusion,
            seed=int(doc.get("seed", 0)),
        )
    except SceneSpecError as exc:
        raise SceneSpecError(f"{where}: {exc}") from None


def save_scene_bundle(path: str | Path, scene: Scene) -> None:
    for name in scene.categories:
        if not _SAFE_NAME.fullmatch(name):
            raise FormatError(f"category {name!r} is not filename-safe")
    root = Path(path)
    (root / "probs").mkdir(parents=True, exist_ok=True)
    (root / "spec.json").write_text(
        json.dumps(spec_to_dict(scene.spec), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_labels_pgm(root / "gt_labels.pgm", scene.gt_labels)
    save_triplets(root / "triplets.json", scene.gt_triplets)
    for name in scene.categories:
        write_rsgf(root / "probs" / f"{name}.rsgf", scene.init_probs[name].values)


def load_scene_bundle(path: str | Path) -> Scene:
    root = Path(path)
    for required in ("spec.json", "gt_labels.pgm", "triplets.json"):
        if not (root / required).exists():
            raise FormatError(f"scene bundle {root} is missing {required}")
    try:
        spec_doc = json.loads((root / "spec.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{root / 'spec.json'}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    spec = spec_from_dict(spec_doc, where=str(root / "spec.json"))
    triplets = load_triplets(root / "triplets.json")
    roster = triplets.categories
    gt_labels = read_labels(root / "gt_labels.pgm", len(roster))
    init_probs = {}
    for name in roster:
        grid_path = root / "probs" / f"{name}.rsgf"
        if not grid_path.exists():
            raise FormatError(f"scene bundle {root} is missing probs/{name}.rsgf")
        init_probs[name] = ProbabilityMap(read_rsgf(grid_path))
    return Scene(
        spec=spec,
        gt_labels=gt_labels,
        categories=roster,
        init_probs=init_probs,
        gt_triplets=triplets,
    )
