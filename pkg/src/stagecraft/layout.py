"""Overlap measurement and iterative layout dispersion.

Overlap is measured as intersection area over the smaller box's area, so a
small box swallowed by a large one counts as fully overlapping.  Dispersion
moves offending boxes away from the collective center of the violating set,
a seeded random distance per iteration, until every pair is at or below the
threshold or the iteration budget runs out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .promptbook import BoundingBox

DEFAULT_OVERLAP_THRESHOLD = 0.25
DEFAULT_MAX_ITERS = 10

# Per-iteration displacement: 5% of the canvas diagonal plus uniform jitter
# in [0, 2.5%].
_BASE_STEP_FRAC = 0.05
_JITTER_FRAC = 0.025


class SizeError(ValueError):
    """A box is larger than the canvas and cannot be placed in-bounds."""


def overlap_fraction(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area divided by the smaller box's area, in [0, 1]."""
    ix = max(0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    if inter == 0:
        return 0.0
    return inter / min(a.area, b.area)


def collective_rect(boxes: Sequence[BoundingBox]) -> BoundingBox:
    """Minimal axis-aligned rectangle containing every box."""
    if not boxes:
        raise ValueError("collective_rect needs at least one box")
    x1 = min(b.x for b in boxes)
    y1 = min(b.y for b in boxes)
    x2 = max(b.x2 for b in boxes)
    y2 = max(b.y2 for b in boxes)
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)


def clamp_to_canvas(box: BoundingBox, canvas: tuple[int, int]) -> BoundingBox:
    """Shift x, y minimally so the box is in-bounds; sides never change."""
    width, height = canvas
    if box.w > width or box.h > height:
        raise SizeError(f"box {box.as_list()} cannot fit canvas {canvas}")
    x = min(max(box.x, 0), width - box.w)
    y = min(max(box.y, 0), height - box.h)
    return BoundingBox(x, y, box.w, box.h)


@dataclass(frozen=True)
class DispersalResult:
    boxes: list[BoundingBox]
    converged: bool
    iters_used: int


def _violating_pairs(
    boxes: Sequence[BoundingBox], threshold: float
) -> list[tuple[int, int]]:
    pairs = []
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if overlap_fraction(boxes[i], boxes[j]) > threshold:
                pairs.append((i, j))
    return pairs


def disperse(
    boxes: Sequence[BoundingBox],
    canvas: tuple[int, int] = (512, 512),
    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD,
    rng_seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> DispersalResult:
    """Push overlapping boxes apart until the max pairwise overlap is legal.

    Only boxes participating in at least one violating pair move; each moves
    along the unit vector from the violating set's collective center to its
    own center (a seeded random direction when the two coincide).  Pure in
    all arguments: the same seed replays the same trajectory.
    """
    rng = np.random.default_rng(rng_seed)
    current = [clamp_to_canvas(b, canvas) for b in boxes]
    diagonal = math.hypot(*canvas)

    for iteration in range(max_iters):
        pairs = _violating_pairs(current, overlap_threshold)
        if not pairs:
            return DispersalResult(current, True, iteration)
        movers = sorted({i for pair in pairs for i in pair})
        rect = collective_rect([current[i] for i in movers])
        cx, cy = rect.center
        for i in movers:
            bx, by = current[i].center
            dx, dy = bx - cx, by - cy
            norm = math.hypot(dx, dy)
            if norm < 1e-9:
                angle = rng.uniform(0.0, 2.0 * math.pi)
                dx, dy = math.cos(angle), math.sin(angle)
            else:
                dx, dy = dx / norm, dy / norm
            distance = diagonal * (_BASE_STEP_FRAC + rng.uniform(0.0, _JITTER_FRAC))
            moved = BoundingBox(
                int(round(current[i].x + dx * distance)),
                int(round(current[i].y + dy * distance)),
                current[i].w,
                current[i].h,
            )
            current[i] = clamp_to_canvas(moved, canvas)

    converged = not _violating_pairs(current, overlap_threshold)
    return DispersalResult(current, converged, max_iters)
