"""Corpus building: sample, prompt, write, repair, correct, validate.

Each dialogue runs the full construction pipeline; dialogues that still
fail validation after corrections are regenerated with a shifted seed, up
to a bounded number of attempts.  The whole corpus is a pure function of
(pools, task, count, seed, writer).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..backends.base import LlmClient
from ..imaging import stable_hash64
from .corrections import correct_dialogue, validate_dialogue
from .pools import CharacterPools, load_pools
from .repair import RepairFailure, repair_format
from .synth import SyntheticDialogueLlm, build_prompt, sample_characters
from .types import BenchDialogue

MAX_GENERATION_ATTEMPTS = 3


@dataclass
class BuildReport:
    """Per-dialogue construction diagnostics."""

    attempts: list[dict] = field(default_factory=list)

    def add(self, index: int, attempt: int, **detail) -> None:
        self.attempts.append({"dialogue": index, "attempt": attempt, **detail})


class BuildError(RuntimeError):
    """A dialogue could not be built within the attempt budget."""


def build_dialogue(
    task: str,
    seed: int,
    pools: Optional[CharacterPools] = None,
    writer: Optional[LlmClient] = None,
    overlap_threshold: float = 0.25,
    index: int = 0,
    report: Optional[BuildReport] = None,
) -> BenchDialogue:
    pools = pools or load_pools()
    writer = writer or SyntheticDialogueLlm()
    report = report if report is not None else BuildReport()
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        attempt_seed = stable_hash64("bench", task, seed, attempt) & 0x7FFFFFFF
        selection = sample_characters(pools, task, attempt_seed)
        prompt = build_prompt(selection)
        raw = writer.complete(prompt)
        try:
            dialogue, repair_report = repair_format(raw)
        except RepairFailure as exc:
            report.add(index, attempt, stage="repair", error=str(exc))
            continue
        dialogue, corrections = correct_dialogue(
            dialogue, overlap_threshold=overlap_threshold, rng_seed=attempt_seed
        )
        if corrections.needs_regeneration:
            report.add(
                index, attempt, stage="correct", flags=corrections.entries
            )
            continue
        violations = validate_dialogue(dialogue, task)
        if violations:
            report.add(
                index,
                attempt,
                stage="validate",
                violations=[f"{v.kind}: {v.message}" for v in violations],
            )
            continue
        if corrections:
            report.add(index, attempt, stage="corrected", entries=corrections.entries)
        return dialogue
    raise BuildError(
        f"dialogue {index} ({task}) failed after {MAX_GENERATION_ATTEMPTS} attempts"
    )


def build_corpus(
    task: str,
    count: int,
    seed: int,
    pools: Optional[CharacterPools] = None,
    writer: Optional[LlmClient] = None,
    overlap_threshold: float = 0.25,
) -> tuple[list[BenchDialogue], BuildReport]:
    """Build ``count`` validated dialogues for one task."""
    if task not in ("story", "editing"):
        raise ValueError(f"task must be story or editing, got {task!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    pools = pools or load_pools()
    writer = writer or SyntheticDialogueLlm()
    report = BuildReport()
    dialogues = [
        build_dialogue(
            task,
            stable_hash64("corpus", seed, i) & 0x7FFFFFFF,
            pools=pools,
            writer=writer,
            overlap_threshold=overlap_threshold,
            index=i,
            report=report,
        )
        for i in range(1, count + 1)
    ]
    return dialogues, report
