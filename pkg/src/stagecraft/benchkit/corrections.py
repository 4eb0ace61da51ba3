"""Automated dialogue corrections and structural validation.

correct_dialogue repairs what can be repaired mechanically (overlapping
layouts, via dispersion) and flags what needs a writer retry (background
leaks, infeasible layouts).  validate_dialogue checks the structural
contract: four turns, in-bounds boxes, id continuity, and for editing
dialogues the fixed round order spatial -> attribute -> negative ->
numeracy.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .. import layout
from ..promptbook import (
    PromptBook,
    Violation,
    _background_words,
    _noun_stem,
)
from .types import TURNS_PER_DIALOGUE, BenchDialogue, BenchTurn

TURN_COUNT = "TURN_COUNT"
TYPE_ORDER = "TYPE_ORDER"
ID_CONTINUITY = "ID_CONTINUITY"
OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
BAD_ID = "BAD_ID"

DEFAULT_OVERLAP_THRESHOLD = 0.25


@dataclass
class CorrectionReport:
    """Every mutation and flag raised while correcting one dialogue."""

    entries: list[dict] = field(default_factory=list)

    def add(self, turn: int, action: str, **detail) -> None:
        self.entries.append({"turn": turn, "action": action, **detail})

    @property
    def needs_regeneration(self) -> bool:
        return any(
            e["action"] in ("regenerate_layout", "background_leak")
            for e in self.entries
        )

    def __bool__(self) -> bool:
        return bool(self.entries)


def correct_dialogue(
    dialogue: BenchDialogue,
    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD,
    rng_seed: int = 0,
    canvas: tuple[int, int] = (512, 512),
) -> tuple[BenchDialogue, CorrectionReport]:
    """Disperse overlapping layouts and flag unfixable problems.

    Never changes a box's width or height and never touches captions;
    every mutation lands in the report as move deltas.
    """
    report = CorrectionReport()
    new_turns: list[BenchTurn] = []
    for turn_no, turn in enumerate(dialogue.turns, start=1):
        book = turn.book
        bg_words = _background_words(book.background_prompt)
        for entry in book.characters:
            if _noun_stem(entry.noun) in bg_words:
                report.add(
                    turn_no, "background_leak", noun=entry.noun, id=entry.id
                )
        boxes = [c.bbox for c in book.characters]
        worst = max(
            (
                layout.overlap_fraction(boxes[i], boxes[j])
                for i in range(len(boxes))
                for j in range(i + 1, len(boxes))
            ),
            default=0.0,
        )
        if worst > overlap_threshold:
            result = layout.disperse(
                boxes,
                canvas=canvas,
                overlap_threshold=overlap_threshold,
                rng_seed=rng_seed + turn_no,
            )
            if result.converged:
                deltas = [
                    [b.x - a.x, b.y - a.y]
                    for a, b in zip(boxes, result.boxes)
                ]
                report.add(
                    turn_no,
                    "disperse",
                    max_overlap_before=round(worst, 4),
                    deltas=deltas,
                )
                characters = tuple(
                    replace(entry, bbox=box)
                    for entry, box in zip(book.characters, result.boxes)
                )
                book = replace(book, characters=characters)
            else:
                report.add(turn_no, "regenerate_layout", max_overlap=round(worst, 4))
        new_turns.append(BenchTurn(caption=turn.caption, book=book))
    return replace(dialogue, turns=tuple(new_turns)), report


def _infer_task(dialogue: BenchDialogue) -> str:
    turns = dialogue.turns
    if len(turns) >= 4:
        ids4 = [c.id for c in turns[3].book.characters]
        if len(ids4) != len(set(ids4)):
            return "editing"
    if len(turns) >= 3 and turns[2].book.negative_prompt:
        return "editing"
    return "story"


def _check_editing_order(dialogue: BenchDialogue) -> list[Violation]:
    violations: list[Violation] = []
    turns = dialogue.turns
    if len(turns) != TURNS_PER_DIALOGUE:
        return violations  # TURN_COUNT already reported

    spatial, attribute, negative, numeracy = (t.book for t in turns)

    ids1 = [c.id for c in spatial.characters]
    if len(ids1) < 2 or len(ids1) != len(set(ids1)) or spatial.negative_prompt:
        violations.append(
            Violation(TYPE_ORDER, "turn 1 must set a spatial scene of distinct objects")
        )
    ids2 = [c.id for c in attribute.characters]
    prompts1 = {c.id: c.prompt for c in spatial.characters}
    prompts2 = {c.id: c.prompt for c in attribute.characters}
    if set(ids2) != set(ids1) or attribute.negative_prompt:
        violations.append(
            Violation(TYPE_ORDER, "turn 2 must keep turn 1's objects (attribute edit)")
        )
    elif all(prompts2.get(i) == prompts1.get(i) for i in prompts2):
        violations.append(
            Violation(TYPE_ORDER, "turn 2 must change at least one object's attributes")
        )
    ids3 = {c.id for c in negative.characters}
    if not negative.negative_prompt or not ids3 < set(ids2):
        violations.append(
            Violation(
                TYPE_ORDER,
                "turn 3 must remove an object and carry a negative prompt",
            )
        )
    ids4 = [c.id for c in numeracy.characters]
    counts = {i: ids4.count(i) for i in set(ids4)}
    duplicated = [i for i, n in counts.items() if n >= 2]
    if not duplicated:
        violations.append(
            Violation(TYPE_ORDER, "turn 4 must duplicate an object id (numeracy edit)")
        )
    else:
        for char_id in duplicated:
            prompts = {c.prompt for c in numeracy.characters if c.id == char_id}
            if len(prompts) > 1:
                violations.append(
                    Violation(
                        TYPE_ORDER,
                        f"turn 4 duplicates id {char_id} with differing prompts",
                    )
                )
    return violations


def validate_dialogue(
    dialogue: BenchDialogue,
    task: Optional[str] = None,
    canvas: tuple[int, int] = (512, 512),
) -> list[Violation]:
    """Structural checks; returns an empty list for a clean dialogue."""
    violations: list[Violation] = []
    if len(dialogue.turns) != TURNS_PER_DIALOGUE:
        violations.append(
            Violation(
                TURN_COUNT,
                f"dialogue has {len(dialogue.turns)} turns, needs "
                f"{TURNS_PER_DIALOGUE}",
            )
        )
    noun_by_id: dict[int, str] = {}
    for turn_no, turn in enumerate(dialogue.turns, start=1):
        for entry in turn.book.characters:
            if entry.id < 1:
                violations.append(
                    Violation(BAD_ID, f"turn {turn_no}: non-positive id {entry.id}")
                )
            if not entry.bbox.in_bounds(canvas):
                violations.append(
                    Violation(
                        OUT_OF_BOUNDS,
                        f"turn {turn_no}: box {entry.bbox.as_list()} exceeds "
                        f"canvas {canvas}",
                    )
                )
            stem = _noun_stem(entry.noun)
            if entry.id in noun_by_id and noun_by_id[entry.id] != stem:
                violations.append(
                    Violation(
                        ID_CONTINUITY,
                        f"id {entry.id} switches from '{noun_by_id[entry.id]}' "
                        f"to '{stem}' in turn {turn_no}",
                    )
                )
            noun_by_id.setdefault(entry.id, stem)
    resolved_task = task or _infer_task(dialogue)
    if resolved_task == "editing":
        violations.extend(_check_editing_order(dialogue))
    return violations
