"""Benchmark dialogue data model and its JSON schema.

A dialogue is exactly four turns, each carrying a caption (the user's
natural-language instruction) and a ground-truth prompt book in the
``objects`` / ``background`` / ``negative`` field layout.  Corpus files map
"dialogue N" keys to dialogue payloads.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Union

from ..promptbook import ParseError, PromptBook, book_from_json, book_to_json

TURNS_PER_DIALOGUE = 4

EDIT_ROUND_TYPES = ("spatial", "attribute", "negative", "numeracy")


@dataclass(frozen=True)
class BenchTurn:
    caption: str
    book: PromptBook


@dataclass(frozen=True)
class BenchDialogue:
    characters: tuple[str, ...]
    scene: Union[str, tuple[str, ...]]
    turns: tuple[BenchTurn, ...]

    def scene_text(self) -> str:
        if isinstance(self.scene, tuple):
            return self.scene[0] if self.scene else ""
        return self.scene


_TURN_KEY_RE = re.compile(r"^turn\s*(\d+)$")


def dialogue_from_json(payload: dict) -> BenchDialogue:
    if not isinstance(payload, dict):
        raise ParseError("dialogue payload must be a mapping")
    characters = payload.get("characters")
    if not isinstance(characters, (list, tuple)):
        raise ParseError("dialogue needs a 'characters' list")
    scene = payload.get("scene", "")
    if isinstance(scene, list):
        scene = tuple(str(s) for s in scene)
    turn_items: list[tuple[int, dict]] = []
    for key, value in payload.items():
        match = _TURN_KEY_RE.match(str(key).strip().lower())
        if match:
            turn_items.append((int(match.group(1)), value))
    turn_items.sort(key=lambda kv: kv[0])
    turns = []
    for number, turn_payload in turn_items:
        book, caption = book_from_json(turn_payload)
        turns.append(BenchTurn(caption=caption, book=book))
    return BenchDialogue(
        characters=tuple(str(c) for c in characters),
        scene=scene,
        turns=tuple(turns),
    )


def dialogue_to_json(dialogue: BenchDialogue) -> dict:
    payload: dict = {
        "characters": list(dialogue.characters),
        "scene": list(dialogue.scene)
        if isinstance(dialogue.scene, tuple)
        else dialogue.scene,
    }
    for i, turn in enumerate(dialogue.turns, start=1):
        payload[f"turn {i}"] = book_to_json(turn.book, caption=turn.caption)
    return payload


def corpus_to_json(dialogues: list[BenchDialogue]) -> dict:
    return {
        f"dialogue {i}": dialogue_to_json(d) for i, d in enumerate(dialogues, start=1)
    }


def corpus_from_json(payload: dict) -> dict[str, BenchDialogue]:
    corpus = {}
    for key in sorted(payload, key=lambda k: (len(k), k)):
        corpus[key] = dialogue_from_json(payload[key])
    return corpus


def dumps_corpus(dialogues: list[BenchDialogue]) -> str:
    return json.dumps(corpus_to_json(dialogues), indent=2)


def loads_corpus(text: str) -> dict[str, BenchDialogue]:
    return corpus_from_json(json.loads(text))
