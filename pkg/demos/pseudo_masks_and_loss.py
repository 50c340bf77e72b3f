"""Anatomy of the spatial constraint loss, from half-plane masks to weights.

Walks through the pieces on tiny grids small enough to read: the mean-
coordinate threshold that turns an anchor map into a half-plane mask, the
product-logic implication, the per-pixel penalty it induces, and the
confidence gate that weights each constraint.
"""

import numpy as np

from relfine import (
    Relation,
    SpatialLossConfig,
    constraint_loss,
    constraint_weight,
    fuzzy_implication,
    make_probability_map,
    pseudo_mask,
)


def show(title, grid, fmt="{:4.1f}"):
    print(f"\n{title}")
    for row in np.asarray(grid):
        print("   " + " ".join(fmt.format(v) for v in row))


print("=" * 64)
print("1. Half-plane mask from an anchor map")
print("=" * 64)

anchor = make_probability_map(4, 6, [
    0.0, 0.0, 0.9, 0.8, 0.0, 0.0,
    0.0, 0.0, 1.0, 0.9, 0.0, 0.0,
    0.0, 0.0, 0.9, 0.9, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
])
show("anchor map (an object sitting around columns 2-3):", anchor.values)

for relation in (Relation.RIGHT, Relation.LEFT, Relation.BELOW, Relation.ABOVE):
    pm = pseudo_mask(anchor, relation, anchor="object")
    print(f"\n{relation.value}-of-object mask (mean coord {pm.mean_coord:.3f}):")
    for row in pm.mask:
        print("   " + " ".join("#" if v else "." for v in row))

print("""
The mask thresholds the coordinate grid at the anchor's mass-weighted mean,
so it moves with the anchor's current belief, not with its argmax.
""")

print("=" * 64)
print("2. Product-logic implication P -> Q = 1 - P(1-Q)")
print("=" * 64)

for p, q in [(1.0, 0.0), (0.0, 0.0), (0.0, 1.0), (0.5, 0.5), (1.0, 1.0), (0.8, 0.25)]:
    print(f"   P={p:.2f}  Q={q:.2f}  ->  {fuzzy_implication(p, q):.3f}")
print("""
Violation needs a confident premise and a failed conclusion: P=1, Q=0 gives
0 (fully violated); P=0 gives 1 regardless (nothing claimed, nothing owed).
""")

print("=" * 64)
print("3. Constraint loss: -sum log(implication) over pixels")
print("=" * 64)

subject = make_probability_map(4, 6, [
    0.0, 0.1, 0.0, 0.0, 0.7, 0.8,
    0.0, 0.0, 0.0, 0.0, 0.9, 0.9,
    0.3, 0.0, 0.0, 0.0, 0.8, 0.7,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
])
show("subject map (mostly right of the object, strays at columns 0-1):", subject.values)

pm = pseudo_mask(anchor, Relation.RIGHT, anchor="object")
loss, grad = constraint_loss(subject, pm)
print(f"\nloss for 'subject must sit right of object': {loss:.4f}")
show("per-pixel gradient (pushes subject mass out of the forbidden zone):", grad)
print("Gradient is zero inside the allowed half plane and grows with the")
print("subject's probability outside it.")

print()
print("=" * 64)
print("4. Constraint weight: sigmoid-gated mean of the anchor's scores")
print("=" * 64)

cfg = SpatialLossConfig()
for description, values in [
    ("confident anchor (all 0.95)", [0.95] * 6),
    ("uncertain anchor (all 0.45)", [0.45] * 6),
    ("absent anchor   (all 0.02)", [0.02] * 6),
    ("mixed anchor    (one strong pixel)", [0.98, 0.1, 0.1, 0.1, 0.1, 0.1]),
]:
    weight = constraint_weight(make_probability_map(1, 6, values), cfg)
    print(f"   {description:38s} weight = {weight:.4f}")
print(f"""
Scores pass through sigmoid(scale*(v - bias)) with bias={cfg.sigmoid_bias},
scale={cfg.sigmoid_scale:g} before averaging, so constraints anchored on
confidently predicted objects dominate and empty anchors fade out.
""")
