"""The triplet calibration pipeline, one stage at a time.

Starts from a deliberately messy set of spatial statements, shows what
bidirectional augmentation adds, what polar validation drops, which pairs
the contradiction scan flags, and how the two-option oracle settles them.
Finishes by replaying the recorded lighthouse log shipped with the tests.
"""

from pathlib import Path

from relfine import (
    Relation,
    ScriptedOracle,
    SpatialTriplet,
    TripletSet,
    augment_bidirectional,
    calibrate,
    detect_contradictions,
    load_scripted_oracle,
    load_triplets,
    opposite,
    resolve_contradictions,
    validate_polar,
)

LOG_DIR = Path(__file__).parent.parent / "tests" / "fixtures" / "lighthouse_log"


def dump(title, triplets):
    print(f"\n{title} ({len(triplets)}):")
    for t in triplets:
        print(f"   {t}   [{t.stage}]")


print("=" * 64)
print("A small messy triplet set")
print("=" * 64)

roster = ("cat", "person", "mat")
initial = TripletSet((
    SpatialTriplet("cat", Relation.RIGHT, "person"),   # true
    SpatialTriplet("person", Relation.RIGHT, "cat"),   # cyclic with the first
    SpatialTriplet("cat", Relation.ABOVE, "mat"),      # true
    SpatialTriplet("cat", Relation.BELOW, "mat"),      # directional clash
    SpatialTriplet("person", Relation.LEFT, "mat"),    # will fail validation
), roster)
dump("initial", initial)

augmented = augment_bidirectional(initial)
dump("after bidirectional augmentation", augmented)

# The answerer: affirms the true facts in both directions, everything else no.
TRUE_FACTS = {
    ("cat", Relation.RIGHT, "person"),
    ("person", Relation.LEFT, "cat"),
    ("cat", Relation.ABOVE, "mat"),
    ("mat", Relation.BELOW, "cat"),
    ("person", Relation.RIGHT, "cat"),   # a stubborn wrong belief, both ways
    ("cat", Relation.LEFT, "person"),
}
holds = {key: "yes" for key in TRUE_FACTS}
choose = {
    ("cat", Relation.RIGHT, Relation.LEFT, "person"): "first",
    ("person", Relation.RIGHT, Relation.LEFT, "cat"): "second",
    ("cat", Relation.LEFT, Relation.RIGHT, "person"): "second",
    ("person", Relation.LEFT, Relation.RIGHT, "cat"): "first",
}
oracle = ScriptedOracle(holds, choose)

validated = validate_polar(augmented, oracle)
dump("after polar validation (primary AND reflection must say yes)", validated)

pairs = detect_contradictions(validated)
print(f"\ncontradictions found ({len(pairs)}):")
for pair in pairs:
    print(f"   {pair.kind:11s} {pair.first}  vs  {pair.second}")

resolved = resolve_contradictions(validated, pairs, oracle)
dump("after resolution (oracle picked the true side)", resolved)
assert detect_contradictions(resolved) == []

print("\n" + "=" * 64)
print("Replaying the recorded lighthouse log")
print("=" * 64)

triplets = load_triplets(LOG_DIR / "triplets.json")
recorded = load_scripted_oracle(LOG_DIR / "oracle.json")
result = calibrate(triplets, recorded)
for stage, count in result.audit.to_dict().items():
    print(f"   {stage:>20}: {count}")

keys = triplets.keys()
reversed_keys = {(o, opposite(r), s) for (s, r, o) in keys}
print(f"\n   check: dedup(initial + reversed) = {len(keys | reversed_keys)}"
      f" == augmented count {result.audit.augmented}")
print(f"   check: validated - dropped = {result.audit.validated - result.audit.resolution_dropped}"
      f" == final count {result.audit.final}")
