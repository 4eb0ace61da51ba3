"""Per-turn pipeline: design, disperse, rehearse, perform.

run_turn owns the session state transition.  It builds everything for the
new turn before mutating anything, so a failure at any stage leaves the
session and the reference store exactly as the previous turn left them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .backends.base import Detector, DiffusionBackend, LlmClient, Segmenter
from .imaging import stable_hash64
from .layout import disperse
from .performance import GuidedRunConfig, run_guided_generation
from .promptbook import (
    CharacterEntry,
    DialogueSession,
    PromptBook,
    TurnRecord,
    diff_characters,
)
from .rehearsal import (
    GuidanceBundle,
    ReferenceStore,
    build_guidance,
    compose_midstate,
    cutout_or_full,
    generate_onstage,
)
from .screenwriter import DesignFailure, DesignerTemplate, design_turn

logger = logging.getLogger(__name__)


class ScriptError(ValueError):
    """A replay script is unusable (empty or malformed)."""


@dataclass
class TurnDeps:
    """Everything a turn needs beyond the session itself."""

    llm: LlmClient
    diffusion: DiffusionBackend
    detector: Detector
    segmenter: Segmenter
    store: ReferenceStore
    template: Optional[DesignerTemplate] = None
    max_retries: int = 3
    overlap_threshold: float = 0.25


@dataclass
class TurnArtifacts:
    """Side products of a turn, for services and UIs."""

    record: TurnRecord
    image: np.ndarray
    references: dict[int, np.ndarray]
    onstage: dict[int, np.ndarray]
    bundle: GuidanceBundle
    dispersed: bool
    detection_fallbacks: int


def _turn_seed(session: DialogueSession, label: str, *parts) -> int:
    return stable_hash64(label, session.seed, *parts)


class _StagedReferences:
    """Read-through view of the store that defers writes until commit.

    Keeps run_turn atomic: new references only reach the store after the
    whole turn has succeeded.
    """

    def __init__(self, store: ReferenceStore, session_id: str):
        self.store = store
        self.session_id = session_id
        self.pending: dict[int, np.ndarray] = {}

    def has(self, char_id: int) -> bool:
        return char_id in self.pending or self.store.has(self.session_id, char_id)

    def get(self, char_id: int) -> np.ndarray:
        if char_id in self.pending:
            return self.pending[char_id]
        return self.store.get(self.session_id, char_id)

    def create(self, char_id: int, image: np.ndarray) -> None:
        self.pending[char_id] = image

    def commit(self) -> None:
        for char_id in sorted(self.pending):
            self.store.put(self.session_id, char_id, self.pending[char_id])


def _apply_dispersion(
    book: PromptBook,
    session: DialogueSession,
    deps: TurnDeps,
    turn_index: int,
) -> tuple[PromptBook, bool]:
    boxes = [c.bbox for c in book.characters]
    if not boxes:
        return book, False
    result = disperse(
        boxes,
        canvas=session.canvas,
        overlap_threshold=deps.overlap_threshold,
        rng_seed=_turn_seed(session, "disperse", turn_index),
    )
    if not result.converged:
        raise DesignFailure(
            f"turn {turn_index}: layout dispersion failed to converge", []
        )
    if all(a == b for a, b in zip(result.boxes, boxes)):
        return book, False
    characters = tuple(
        replace(entry, bbox=box) for entry, box in zip(book.characters, result.boxes)
    )
    return replace(book, characters=characters), True


def run_turn(
    session: DialogueSession,
    instruction: str,
    deps: TurnDeps,
    cfg: GuidedRunConfig,
) -> TurnArtifacts:
    """Execute one dialogue turn and append its record to the session.

    The session is mutated only on success; DesignFailure and backend
    errors leave it untouched.
    """
    turn_index = session.next_index()
    book = design_turn(
        history=session.turns,
        instruction=instruction,
        client=deps.llm,
        max_retries=deps.max_retries,
        template=deps.template,
        canvas=session.canvas,
        overlap_threshold=deps.overlap_threshold,
    )
    book, dispersed = _apply_dispersion(book, session, deps, turn_index)

    diff = diff_characters(session.last_book(), book)
    staged = _StagedReferences(deps.store, session.session_id)

    # One reference and one on-stage image per distinct id; duplicated ids
    # (numeracy turns) share both and differ only in placement.
    distinct: list[CharacterEntry] = []
    seen: set[int] = set()
    for entry in book.characters:
        if entry.id not in seen:
            distinct.append(entry)
            seen.add(entry.id)

    references: dict[int, np.ndarray] = {}
    onstage: dict[int, np.ndarray] = {}
    for entry in distinct:
        if staged.has(entry.id):
            reference = staged.get(entry.id)
            is_new = False
        else:
            if entry.id not in diff["new_ids"]:
                logger.warning(
                    "id %s is retained by diff but has no stored reference",
                    entry.id,
                )
            reference = deps.diffusion.generate(
                prompt=entry.prompt,
                seed=_turn_seed(session, "reference", entry.id),
            )
            staged.create(entry.id, reference)
            is_new = True
        references[entry.id] = reference
        onstage[entry.id] = (
            reference
            if is_new
            else generate_onstage(
                entry,
                reference,
                deps.diffusion,
                seed=_turn_seed(session, "onstage", turn_index, entry.id),
            )
        )

    fallbacks = 0
    cutouts = []
    cutout_by_id = {}
    for entry in distinct:
        cutout, fell_back = cutout_or_full(
            onstage[entry.id], entry.prompt, deps.detector, deps.segmenter
        )
        cutout_by_id[entry.id] = cutout
        fallbacks += int(fell_back)
    for entry in book.characters:
        cutouts.append(cutout_by_id[entry.id])

    mid = compose_midstate(cutouts, book.characters, canvas=session.canvas)
    bundle = build_guidance(
        mid,
        deps.diffusion,
        steps=cfg.steps,
        seed=_turn_seed(session, "guidance", turn_index),
    )
    image = run_guided_generation(
        book,
        bundle,
        deps.diffusion,
        replace(cfg, seed=_turn_seed(session, "final", turn_index)),
    )

    staged.commit()
    record = TurnRecord(
        index=turn_index,
        instruction=instruction,
        prompt_book=book,
        image_ref="",
    )
    session.turns.append(record)
    return TurnArtifacts(
        record=record,
        image=image,
        references=references,
        onstage=onstage,
        bundle=bundle,
        dispersed=dispersed,
        detection_fallbacks=fallbacks,
    )


def replay_session(
    script: Sequence[str],
    deps: TurnDeps,
    cfg: GuidedRunConfig,
    session_id: str = "replay",
    seed: int = 0,
    canvas: tuple[int, int] = (512, 512),
) -> tuple[DialogueSession, list[TurnArtifacts]]:
    """Fold run_turn over a list of instructions.

    The first failing turn aborts; the partial session rides out on the
    raised error as ``error.partial_session``.
    """
    if not script:
        raise ScriptError("replay script must hold at least one instruction")
    session = DialogueSession(session_id=session_id, seed=seed, canvas=canvas)
    artifacts: list[TurnArtifacts] = []
    for instruction in script:
        try:
            artifacts.append(run_turn(session, instruction, deps, cfg))
        except Exception as exc:
            exc.partial_session = session  # type: ignore[attr-defined]
            raise
    return session, artifacts
