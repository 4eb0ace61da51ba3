"""Dialogue sampling, builder-prompt templates, and the synthetic writer LLM.

The corpus builder mirrors the production flow: sample characters and
constraints, render a construction prompt, send it to an LLM, then repair
and validate whatever comes back.  At desk scale the LLM is
:class:`SyntheticDialogueLlm`, which reads the constraints back out of the
prompt like a (very obedient) model would and emits dialogue JSON text,
optionally with injected formatting flaws to exercise the repair passes.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..backends.base import LlmClient
from ..imaging import stable_hash64
from .pools import NUMBER_VALUES, NUMBER_WORDS, RELATIONS, CharacterPools

CANVAS = 512

# Anchor slots on a 3 x 3 grid; boxes sampled inside a slot never collide
# with boxes in other slots before jitter.
_SLOT_CELL = 168
_SLOT_ORIGIN = 4
_SLOTS = [
    (_SLOT_ORIGIN + col * _SLOT_CELL, _SLOT_ORIGIN + row * _SLOT_CELL)
    for row in range(3)
    for col in range(3)
]

_BOX_MIN, _BOX_MAX = 140, 160
_JITTER = 16

COLORS = (
    "red", "blue", "green", "yellow", "purple", "orange", "pink", "brown",
    "black", "white", "gray", "golden", "silver", "cyan", "magenta", "beige",
)

STORY_MODIFIERS = (
    "tiny", "attentive", "vigilant", "curious", "sleepy", "gentle",
    "playful", "quiet", "bold", "calm",
)


class TemplateError(ValueError):
    """A builder template was rendered without a required selection field."""


@dataclass(frozen=True)
class Selection:
    """One dialogue's sampled ingredients."""

    task: str
    characters: tuple[str, ...]
    scene: str
    seed: int
    number_pick: Optional[str] = None
    relation_pick: Optional[str] = None


def sample_characters(
    pools: CharacterPools, task: str, rng_seed: int = 0
) -> Selection:
    """Draw characters and constraints for one dialogue, deterministically."""
    rng = np.random.default_rng(rng_seed)
    if task == "story":
        count = int(rng.integers(2, 4))
        picks = rng.choice(len(pools.story_characters), size=count, replace=False)
        characters = tuple(pools.story_characters[i] for i in picks)
        scene = pools.background[int(rng.integers(len(pools.background)))]
        return Selection(task=task, characters=characters, scene=scene, seed=rng_seed)
    if task == "editing":
        picks = rng.choice(len(pools.editing_characters), size=2, replace=False)
        characters = tuple(pools.editing_characters[i] for i in picks)
        number = NUMBER_WORDS[int(rng.integers(len(NUMBER_WORDS)))]
        relation = RELATIONS[int(rng.integers(len(RELATIONS)))]
        return Selection(
            task=task,
            characters=characters,
            scene="empty background",
            seed=rng_seed,
            number_pick=number,
            relation_pick=relation,
        )
    raise ValueError(f"unknown task {task!r}")


def _article(noun: str) -> str:
    return "an" if noun[:1].lower() in "aeiou" else "a"


def build_story_prompt(selection: Selection) -> str:
    if selection.task != "story":
        raise TemplateError("story template needs a story selection")
    if not selection.characters or not selection.scene:
        raise TemplateError("story template needs characters and a scene")
    names = ", ".join(
        f"{_article(c)} {c}" for c in selection.characters
    )
    return (
        f"Write a four-sentence story starring {names} as protagonists. "
        f"The setting background is {selection.scene}. Keep each sentence "
        "simple, use at most three countable singular objects per sentence, "
        "and refer back to known protagonists with pronouns. For every "
        "sentence produce the matching layout: each object as (an article "
        "plus a modifier plus a singular countable noun, [top-left x, "
        "top-left y, box width, box height], object number) on a 512 x 512 "
        "image, numbers stable across sentences for recurring objects, "
        "boxes inside the image and not overlapping, plus a background "
        "prompt and a negative prompt per sentence. Reply as JSON with "
        "characters, scene, and turn 1 through turn 4."
    )


def build_editing_prompt(selection: Selection) -> str:
    if selection.task != "editing":
        raise TemplateError("editing template needs an editing selection")
    if selection.number_pick is None or selection.relation_pick is None:
        raise TemplateError("editing template needs number and relation picks")
    objects = ", ".join(selection.characters)
    return (
        f"Simulate a four-round image editing conversation over this object "
        f"list: [{objects}]. Round 1 edits spatial arrangement, round 2 "
        "edits an attribute, round 3 removes an object via the negative "
        "prompt, round 4 edits how many objects there are. Keep object "
        "numbers stable across rounds even when attributes change, and "
        "refer back to known objects with pronouns. For every round produce "
        "the matching layout: each object as (an article plus a modifier "
        "plus a singular countable noun, [top-left x, top-left y, box "
        "width, box height], object number) on a 512 x 512 image, boxes "
        "inside the image and not overlapping, plus a background prompt "
        "(empty background) and a negative prompt per round. The quantity "
        f"in the numeracy round must be {selection.number_pick} and the "
        f"spatial relation in round 1 must be {selection.relation_pick}. "
        "Reply as JSON with characters, scene, and turn 1 through turn 4."
    )


def build_prompt(selection: Selection) -> str:
    return (
        build_story_prompt(selection)
        if selection.task == "story"
        else build_editing_prompt(selection)
    )


# ---------------------------------------------------------------------------
# Synthetic writer


_EDIT_OBJECTS_RE = re.compile(r"object list:\s*\[([^\]]*)\]")
_EDIT_NUMBER_RE = re.compile(r"numeracy round must be (\w+)")
_EDIT_RELATION_RE = re.compile(r"relation in round 1 must be (to the \w+ of)")
_STORY_CAST_RE = re.compile(r"starring (.+) as protagonists")
_STORY_SCENE_RE = re.compile(r"setting background is ([^.]+)\.")


def _strip_article(name: str) -> str:
    words = name.strip().split()
    if words and words[0].lower() in ("a", "an", "the"):
        words = words[1:]
    return " ".join(words)


class SyntheticDialogueLlm(LlmClient):
    """Deterministic stand-in for the benchmark construction model.

    Parses the constraints out of the builder prompt, then emits a dialogue
    as JSON text seeded by the prompt itself.  ``flaw_rate`` > 0 injects
    format defects (full-width punctuation, unclosed brackets, single
    quotes) for the repair pipeline to fix.
    """

    def __init__(self, flaw_rate: float = 0.0, seed: int = 0):
        self.flaw_rate = flaw_rate
        self.seed = seed

    def complete(self, prompt: str, params: Optional[dict] = None) -> str:
        rng = np.random.default_rng(stable_hash64("writer", self.seed, prompt))
        if "editing conversation" in prompt:
            payload = self._editing_dialogue(prompt, rng)
        elif "four-sentence story" in prompt:
            payload = self._story_dialogue(prompt, rng)
        else:
            raise ValueError("unrecognized builder prompt")
        text = json.dumps(payload, indent=1)
        if self.flaw_rate > 0 and rng.random() < self.flaw_rate:
            text = self._inject_flaw(text, rng)
        return text

    # -- layout helpers ------------------------------------------------------

    def _boxes(self, rng, count: int, jitter: bool = True) -> list[list[int]]:
        slot_ids = rng.choice(len(_SLOTS), size=count, replace=False)
        boxes = []
        for sid in slot_ids:
            x0, y0 = _SLOTS[int(sid)]
            w = int(rng.integers(_BOX_MIN, _BOX_MAX + 1))
            h = int(rng.integers(_BOX_MIN, _BOX_MAX + 1))
            x, y = x0, y0
            if jitter:
                x += int(rng.integers(-_JITTER, _JITTER + 1))
                y += int(rng.integers(-_JITTER, _JITTER + 1))
            x = min(max(x, 0), CANVAS - w)
            y = min(max(y, 0), CANVAS - h)
            boxes.append([x, y, w, h])
        return boxes

    def _slot_pair_for_relation(self, rng, relation: str) -> tuple[int, int]:
        while True:
            a, b = rng.choice(len(_SLOTS), size=2, replace=False)
            acol, arow = int(a) % 3, int(a) // 3
            bcol, brow = int(b) % 3, int(b) // 3
            if relation == "to the left of" and acol < bcol:
                return int(a), int(b)
            if relation == "to the right of" and acol > bcol:
                return int(a), int(b)
            if relation == "to the top of" and arow < brow:
                return int(a), int(b)
            if relation == "to the down of" and arow > brow:
                return int(a), int(b)

    def _box_at_slot(self, rng, slot: int) -> list[int]:
        x0, y0 = _SLOTS[slot]
        w = int(rng.integers(_BOX_MIN, _BOX_MAX + 1))
        h = int(rng.integers(_BOX_MIN, _BOX_MAX + 1))
        x = min(max(x0 + int(rng.integers(-_JITTER, _JITTER + 1)), 0), CANVAS - w)
        y = min(max(y0 + int(rng.integers(-_JITTER, _JITTER + 1)), 0), CANVAS - h)
        return [x, y, w, h]

    # -- dialogue synthesis ----------------------------------------------------

    def _editing_dialogue(self, prompt: str, rng) -> dict:
        objects_m = _EDIT_OBJECTS_RE.search(prompt)
        number_m = _EDIT_NUMBER_RE.search(prompt)
        relation_m = _EDIT_RELATION_RE.search(prompt)
        if not (objects_m and number_m and relation_m):
            raise ValueError("editing prompt is missing constraints")
        names = [n.strip() for n in objects_m.group(1).split(",") if n.strip()]
        if len(names) < 2:
            raise ValueError("editing prompt needs two objects")
        first, second = names[0], names[1]
        number_word = number_m.group(1)
        count = NUMBER_VALUES[number_word]
        relation = relation_m.group(1)
        rel_caption = relation.removeprefix("to the ")

        p_first = f"{_article(first)} {first}"
        p_second = f"{_article(second)} {second}"
        color = COLORS[int(rng.integers(len(COLORS)))]
        p_first_colored = f"a {color} {first}"

        slot_a, slot_b = self._slot_pair_for_relation(rng, relation)
        box_first = self._box_at_slot(rng, slot_a)
        box_second = self._box_at_slot(rng, slot_b)
        quad_boxes = self._boxes(rng, count, jitter=True)

        background = "empty background"
        return {
            "characters": [first, second],
            "scene": background,
            "turn 1": {
                "caption": f"I want {p_first} {rel_caption} {p_second}",
                "objects": [[p_first, box_first, 1], [p_second, box_second, 2]],
                "background": background,
                "negative": "None",
            },
            "turn 2": {
                "caption": f"Turn the {first} into a {color} one",
                "objects": [[p_first_colored, box_first, 1], [p_second, box_second, 2]],
                "background": background,
                "negative": "None",
            },
            "turn 3": {
                "caption": "I don't want it anymore",
                "objects": [[p_second, box_second, 2]],
                "background": background,
                "negative": p_first_colored,
            },
            "turn 4": {
                "caption": f"Give me {number_word} of the remaining object.",
                "objects": [[p_second, box, 2] for box in quad_boxes],
                "background": background,
                "negative": "None",
            },
        }

    def _story_dialogue(self, prompt: str, rng) -> dict:
        cast_m = _STORY_CAST_RE.search(prompt)
        scene_m = _STORY_SCENE_RE.search(prompt)
        if not (cast_m and scene_m):
            raise ValueError("story prompt is missing its cast or scene")
        names = [
            _strip_article(n)
            for n in re.split(r",| and ", cast_m.group(1))
            if _strip_article(n)
        ]
        scene = scene_m.group(1).strip()
        modifiers = [
            STORY_MODIFIERS[int(rng.integers(len(STORY_MODIFIERS)))] for _ in names
        ]
        prompts = [
            f"{_article(mod)} {mod} {name}" for mod, name in zip(modifiers, names)
        ]
        slots = rng.choice(len(_SLOTS), size=len(names), replace=False)
        boxes = [self._box_at_slot(rng, int(s)) for s in slots]
        background = f"a quiet {scene}"

        def turn(caption: str, members: list[int]) -> dict:
            return {
                "caption": caption,
                "objects": [[prompts[i], boxes[i], i + 1] for i in members],
                "background": background,
                "negative": "None",
            }

        captions = [
            f"In the {scene}, {prompts[0]} was looking around.",
            f"Then {prompts[1 % len(names)]} came closer to watch it."
            if len(names) > 1
            else f"The {names[0]} kept exploring the {scene}.",
            f"Soon {prompts[2 % len(names)]} joined them quietly."
            if len(names) > 2
            else f"They settled near the middle of the {scene}.",
            "In the end they all rested together peacefully.",
        ]
        members_by_turn = [
            [0],
            sorted({0, 1 % len(names)}),
            sorted({0, 1 % len(names), 2 % len(names)}),
            list(range(len(names))),
        ]
        payload: dict = {"characters": names, "scene": [scene]}
        for i in range(4):
            payload[f"turn {i + 1}"] = turn(captions[i], members_by_turn[i])
        return payload

    # -- flaw injection --------------------------------------------------------

    def _inject_flaw(self, text: str, rng) -> str:
        kind = int(rng.integers(3))
        if kind == 0:
            return text.replace(",", "，", 1)
        if kind == 1:
            last = text.rfind("]")
            if last >= 0:
                return text[:last] + text[last + 1:]
            return text
        return text.replace('"', "'")
