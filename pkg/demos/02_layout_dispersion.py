"""Layout repair: pushing overlapping character boxes apart.

Overlap is intersection area over the smaller box's area, so a swallowed
box counts as fully overlapping. Dispersion moves the members of violating
pairs away from their collective center, a seeded random distance per
iteration, until every pair is at or under the threshold.
"""
import numpy as np

from stagecraft.layout import collective_rect, disperse, overlap_fraction
from stagecraft.promptbook import BoundingBox

a = BoundingBox(100, 100, 200, 200)
b = BoundingBox(160, 160, 200, 200)
c = BoundingBox(380, 40, 100, 100)

print(f"overlap(a, b) = {overlap_fraction(a, b):.3f}")
print(f"overlap(a, c) = {overlap_fraction(a, c):.3f}")
print("collective rect of all three:", collective_rect([a, b, c]).as_list())

result = disperse([a, b, c], canvas=(512, 512), overlap_threshold=0.25, rng_seed=7)
print(f"converged={result.converged} after {result.iters_used} iterations")
for before, after in zip([a, b, c], result.boxes):
    moved = "moved" if before != after else "stayed"
    print(f"  {before.as_list()} -> {after.as_list()}  ({moved})")
worst = max(
    overlap_fraction(result.boxes[i], result.boxes[j])
    for i in range(3)
    for j in range(i + 1, 3)
)
print(f"max pairwise overlap after dispersion: {worst:.3f}")

# widths and heights never change; the same seed replays the same moves
assert [(x.w, x.h) for x in result.boxes] == [(x.w, x.h) for x in [a, b, c]]
assert disperse([a, b, c], (512, 512), 0.25, rng_seed=7) == result
print("sizes frozen, trajectory replayable under its seed")

# an infeasible layout reports converged=False instead of pretending
stuck = disperse(
    [BoundingBox(0, 0, 512, 512), BoundingBox(0, 0, 512, 512)], (512, 512), rng_seed=1
)
print("two canvas-sized boxes:", f"converged={stuck.converged}")
