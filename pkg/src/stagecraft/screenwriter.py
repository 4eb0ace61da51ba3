"""Scene designer: renders the layout-planning prompt and runs the LLM loop.

The designer prompt carries five literal sections (task description,
supporting details, examples, history, current instruction); the LLM
answers in the prompt-book text grammar.  design_turn parses and validates
the answer with a bounded retry loop; overlap violations pass through
because the layout module repairs them mechanically downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backends.base import LlmClient
from .promptbook import (
    OVERLAP,
    ParseError,
    PromptBook,
    TurnRecord,
    parse_prompt_book,
    serialize_prompt_book,
    validate,
)

# Prior turns included in the history section; benchmark dialogues run 4
# turns so this only binds for unusually long sessions.
HISTORY_WINDOW = 8

DEFAULT_TASK_DESCRIPTION = (
    "Your task is to plan one image for the current instruction. List every "
    "foreground object as a tuple of (an object with an article a or an and "
    "a modifier, [top-left x, top-left y, box width, box height], object "
    "number), then give a background prompt describing the scene and a "
    "negative prompt naming anything that must not appear."
)

DEFAULT_SUPPORTING_DETAILS = (
    "The images are of size {width} x {height}. The top-left corner has "
    "coordinates [0, 0]. The bottom-right corner has coordinates "
    "[{width}, {height}]. Boxes must stay inside the image and should not "
    "overlap; keep them generously sized. Reuse an object's number from "
    "earlier turns when the instruction refers to the same object, even if "
    "its attributes changed. Never mention a boxed object inside the "
    "background prompt. Use \"a realistic scene\" as the background prompt "
    "when no background is given. Answer with exactly three lines: "
    "Characters, Background prompt, Negative prompt."
)

DEFAULT_EXAMPLES = (
    "Instruction: a lamp to the left of a mug on a desk\n"
    "Characters: [(\"a brass lamp\", [40, 120, 150, 220], 1), "
    "(\"a striped mug\", [300, 260, 120, 130], 2)]\n"
    "Background prompt: a tidy desk\n"
    "Negative prompt: None",
    "Instruction: remove the lamp\n"
    "Characters: [(\"a striped mug\", [300, 260, 120, 130], 2)]\n"
    "Background prompt: a tidy desk\n"
    "Negative prompt: a brass lamp",
)


@dataclass(frozen=True)
class DesignerTemplate:
    """The five-section designer prompt skeleton."""

    task_description: str = DEFAULT_TASK_DESCRIPTION
    supporting_details: str = DEFAULT_SUPPORTING_DETAILS
    examples: tuple[str, ...] = DEFAULT_EXAMPLES
    history_window: int = HISTORY_WINDOW


class DesignFailure(RuntimeError):
    """The LLM never produced a usable prompt book.

    ``transcripts`` holds every raw response for diagnostics.
    """

    def __init__(self, message: str, transcripts: Sequence[str]):
        super().__init__(message)
        self.transcripts = list(transcripts)


def _render_history(history: Sequence[TurnRecord], window: int) -> str:
    recent = list(history)[-window:]
    blocks = []
    for record in recent:
        blocks.append(
            f"Turn {record.index}: {record.instruction}\n"
            f"{serialize_prompt_book(record.prompt_book)}"
        )
    return "\n\n".join(blocks)


def build_designer_prompt(
    history: Sequence[TurnRecord],
    instruction: str,
    template: Optional[DesignerTemplate] = None,
    canvas: tuple[int, int] = (512, 512),
) -> str:
    """Deterministic rendering of the five-section designer prompt."""
    tpl = template or DesignerTemplate()
    details = tpl.supporting_details.format(width=canvas[0], height=canvas[1])
    examples = "\n\n".join(tpl.examples)
    return (
        f"<Task Description>: {tpl.task_description}\n\n"
        f"<Supporting details>: {details}\n\n"
        f"<Examples>:\n{examples}\n\n"
        f"<History dialogue>:\n{_render_history(history, tpl.history_window)}\n\n"
        f"<Current instruction>: {instruction}"
    )


def design_turn(
    history: Sequence[TurnRecord],
    instruction: str,
    client: LlmClient,
    max_retries: int = 3,
    template: Optional[DesignerTemplate] = None,
    canvas: tuple[int, int] = (512, 512),
    overlap_threshold: float = 0.25,
) -> PromptBook:
    """Ask the LLM for a prompt book until one parses and validates.

    OVERLAP violations are tolerated (the layout repair fixes them); any
    other violation or a parse failure triggers a retry with a one-line
    correction note appended.  After ``max_retries`` failures the raw
    transcripts ride out on :class:`DesignFailure`.
    """
    base_prompt = build_designer_prompt(history, instruction, template, canvas)
    transcripts: list[str] = []
    correction = ""
    for _attempt in range(max_retries):
        raw = client.complete(base_prompt + correction, params={"temperature": 0.0})
        transcripts.append(raw)
        try:
            book = parse_prompt_book(raw, canvas)
        except ParseError as exc:
            correction = (
                f"\n\nCorrection: the previous answer failed to parse "
                f"({exc}); reply again using exactly the three-line format."
            )
            continue
        violations = validate(book, canvas, overlap_threshold)
        blocking = [v for v in violations if v.kind != OVERLAP]
        if not blocking:
            return book
        kinds = ", ".join(sorted({v.kind for v in blocking}))
        correction = (
            f"\n\nCorrection: the previous answer violated {kinds}; "
            f"fix those problems and reply again in the same format."
        )
    raise DesignFailure(
        f"no valid prompt book after {max_retries} attempts", transcripts
    )
