"""Prompt book data model, text grammar, validation, and cross-turn diffing.

A prompt book is the structured scene plan for one interaction turn: a
background prompt, a negative prompt, and an ordered list of
``(id, prompt, bounding box)`` character entries.  Everything in this module
is an immutable value; parsing is strict (malformed text raises
:class:`ParseError`, repair lives in :mod:`stagecraft.benchkit`).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

DEFAULT_CANVAS = (512, 512)

ARTICLES = ("a", "an", "the")

# Small irregular-plural table for the numeracy rendering of duplicated ids.
IRREGULAR_PLURALS = {
    "man": "men",
    "woman": "women",
    "child": "children",
    "person": "people",
    "mouse": "mice",
    "goose": "geese",
    "foot": "feet",
    "tooth": "teeth",
    "sheep": "sheep",
    "deer": "deer",
    "fish": "fish",
}

COUNT_WORDS = {
    2: "two", 3: "three", 4: "four", 5: "five", 6: "six",
    7: "seven", 8: "eight", 9: "nine", 10: "ten",
}


class ParseError(ValueError):
    """Raised when prompt-book text violates the grammar.

    ``position`` is a character offset into the original text.
    """

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel rectangle with top-left anchor.

    Width and height must be positive.  Canvas containment is not enforced
    here; it is reported by :func:`validate` and repaired by
    :func:`stagecraft.layout.clamp_to_canvas`.
    """

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got w={self.w} h={self.h}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> int:
        return self.w * self.h

    def in_bounds(self, canvas: tuple[int, int]) -> bool:
        width, height = canvas
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class CharacterEntry:
    """One character in a prompt book: identity, description, placement."""

    id: int
    prompt: str
    bbox: BoundingBox

    def __post_init__(self):
        if not self.prompt or not self.prompt.strip():
            raise ValueError("character prompt must be non-empty")

    @property
    def noun(self) -> str:
        """Head noun of the prompt (last word, articles stripped)."""
        words = [w for w in re.findall(r"[a-zA-Z]+", self.prompt.lower())]
        return words[-1] if words else ""


@dataclass(frozen=True)
class PromptBook:
    """Per-turn scene description: background, negative, character entries.

    The negative prompt is stored normalized: the literal string "None" in
    the text grammar maps to the empty string here.
    """

    background_prompt: str
    negative_prompt: str = ""
    characters: tuple[CharacterEntry, ...] = ()

    def __post_init__(self):
        if isinstance(self.characters, list):
            object.__setattr__(self, "characters", tuple(self.characters))
        if not self.characters and not self.background_prompt.strip():
            raise ValueError("a prompt book needs characters or a background prompt")

    def ids(self) -> set[int]:
        return {c.id for c in self.characters}

    def entries_for(self, char_id: int) -> list[CharacterEntry]:
        return [c for c in self.characters if c.id == char_id]


@dataclass(frozen=True)
class TurnRecord:
    """A completed turn: the instruction, its prompt book, the image handle."""

    index: int
    instruction: str
    prompt_book: PromptBook
    image_ref: str = ""


@dataclass
class DialogueSession:
    """Ordered turn records plus the seed and canvas the session was opened with."""

    session_id: str
    seed: int
    canvas: tuple[int, int] = DEFAULT_CANVAS
    turns: list[TurnRecord] = field(default_factory=list)

    def last_book(self) -> Optional[PromptBook]:
        return self.turns[-1].prompt_book if self.turns else None

    def next_index(self) -> int:
        return len(self.turns) + 1


# ---------------------------------------------------------------------------
# Violations

OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
OVERLAP = "OVERLAP"
BACKGROUND_LEAK = "BACKGROUND_LEAK"
BAD_ID = "BAD_ID"


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    entries: tuple[int, ...] = ()


# ---------------------------------------------------------------------------
# Text grammar
#
# Canonical serialized form (one field per line, characters first):
#
#   Characters: [("a pen", [97, 235, 162, 222], 1), ...]
#   Background prompt: empty background
#   Negative prompt: None
#
# The parser also accepts angle-bracketed field markers (<Characters>:) and
# single-quoted prompts, since scene designers emit both.

_FIELD_RE = re.compile(
    r"^[ \t]*<?(?P<name>Characters|Background prompt|Negative prompt)>?[ \t]*:",
    re.MULTILINE,
)


def _find_fields(text: str) -> dict[str, tuple[int, str]]:
    matches = list(_FIELD_RE.finditer(text))
    fields: dict[str, tuple[int, str]] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end():end].strip()
        name = m.group("name")
        if name in fields:
            raise ParseError(f"duplicate field '{name}'", m.start())
        fields[name] = (m.end(), body)
    return fields


def _parse_int(token: str, pos: int, what: str) -> int:
    token = token.strip()
    if not re.fullmatch(r"[+-]?\d+", token):
        raise ParseError(f"{what} must be an integer, got {token!r}", pos)
    return int(token)


def _parse_character_list(body: str, offset: int) -> list[CharacterEntry]:
    """Parse ``[("prompt", [x, y, w, h], id), ...]``. Strict, no repair."""
    s = body.strip()
    if not (s.startswith("[") and s.endswith("]")):
        raise ParseError("characters field must be a bracketed list", offset)
    inner = s[1:-1].strip()
    if not inner:
        return []
    entries: list[CharacterEntry] = []
    i = 0
    base = offset + body.find("[") + 1
    while i < len(inner):
        while i < len(inner) and inner[i] in " ,\n\t":
            i += 1
        if i >= len(inner):
            break
        if inner[i] != "(":
            raise ParseError("expected '(' opening a character tuple", base + i)
        depth = 0
        j = i
        while j < len(inner):
            if inner[j] == "(":
                depth += 1
            elif inner[j] == ")":
                depth -= 1
                if depth == 0:
                    break
            j += 1
        if depth != 0:
            raise ParseError("unclosed character tuple", base + i)
        tuple_body = inner[i + 1:j]
        entries.append(_parse_character_tuple(tuple_body, base + i + 1))
        i = j + 1
    return entries


_TUPLE_RE = re.compile(
    r"""^\s*(?P<q>["'])(?P<prompt>.*?)(?P=q)\s*,\s*
        \[(?P<bbox>[^\]]*)\]\s*,\s*
        (?P<id>[^,\s]+)\s*$""",
    re.VERBOSE | re.DOTALL,
)


def _parse_character_tuple(body: str, pos: int) -> CharacterEntry:
    m = _TUPLE_RE.match(body)
    if m is None:
        raise ParseError(f"malformed character tuple {body!r}", pos)
    bbox_items = [t for t in m.group("bbox").split(",") if t.strip()]
    if len(bbox_items) != 4:
        raise ParseError(
            f"bounding box needs exactly 4 integers, got {len(bbox_items)}", pos
        )
    x, y, w, h = (_parse_int(t, pos, "bounding box coordinate") for t in bbox_items)
    char_id = _parse_int(m.group("id"), pos, "character id")
    prompt = m.group("prompt").strip()
    if not prompt:
        raise ParseError("character prompt must be non-empty", pos)
    try:
        box = BoundingBox(x, y, w, h)
    except ValueError as exc:
        raise ParseError(str(exc), pos) from exc
    return CharacterEntry(id=char_id, prompt=prompt, bbox=box)


def parse_prompt_book(text: str, canvas: tuple[int, int] = DEFAULT_CANVAS) -> PromptBook:
    """Parse the three-field prompt-book text format.

    Canvas is accepted for signature symmetry with :func:`validate`; bounds
    problems are reported by validation, not parsing, so that a designer
    retry loop can see OUT_OF_BOUNDS as data.
    """
    fields = _find_fields(text)
    for required in ("Characters", "Background prompt", "Negative prompt"):
        if required not in fields:
            raise ParseError(f"missing field '{required}'", len(text))
    chars_pos, chars_body = fields["Characters"]
    characters = _parse_character_list(chars_body, chars_pos)
    background = fields["Background prompt"][1].strip()
    negative = fields["Negative prompt"][1].strip()
    if negative.lower() == "none":
        negative = ""
    try:
        return PromptBook(
            background_prompt=background,
            negative_prompt=negative,
            characters=tuple(characters),
        )
    except ValueError as exc:
        raise ParseError(str(exc), 0) from exc


def serialize_prompt_book(book: PromptBook) -> str:
    """Canonical text form; ``parse_prompt_book`` inverts it exactly."""
    tuples = ", ".join(
        f'("{c.prompt}", [{c.bbox.x}, {c.bbox.y}, {c.bbox.w}, {c.bbox.h}], {c.id})'
        for c in book.characters
    )
    negative = book.negative_prompt if book.negative_prompt else "None"
    return (
        f"Characters: [{tuples}]\n"
        f"Background prompt: {book.background_prompt}\n"
        f"Negative prompt: {negative}"
    )


# ---------------------------------------------------------------------------
# Validation


def _noun_stem(word: str) -> str:
    word = word.lower()
    for noun, plural in IRREGULAR_PLURALS.items():
        if word == plural:
            return noun
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def _background_words(background: str) -> set[str]:
    return {_noun_stem(w) for w in re.findall(r"[a-zA-Z]+", background)}


def validate(
    book: PromptBook,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    overlap_threshold: float = 0.25,
) -> list[Violation]:
    """Check bounds, pairwise overlap, id rules, and background leaks.

    Violations are data: the list is empty iff the book is clean.  Adding an
    offending entry can only add violations (monotonicity), so callers may
    cache results per entry subset.
    """
    from . import layout  # local import to avoid a cycle at module load

    violations: list[Violation] = []
    for i, entry in enumerate(book.characters):
        if entry.id < 1:
            violations.append(
                Violation(BAD_ID, f"entry {i} has non-positive id {entry.id}", (i,))
            )
        if not entry.bbox.in_bounds(canvas):
            violations.append(
                Violation(
                    OUT_OF_BOUNDS,
                    f"entry {i} box {entry.bbox.as_list()} exceeds canvas {canvas}",
                    (i,),
                )
            )
    # Shared ids must share an identical prompt (numeracy duplication).
    by_id: dict[int, set[str]] = {}
    for entry in book.characters:
        by_id.setdefault(entry.id, set()).add(entry.prompt)
    for char_id, prompts in sorted(by_id.items()):
        if len(prompts) > 1:
            indices = tuple(
                i for i, e in enumerate(book.characters) if e.id == char_id
            )
            violations.append(
                Violation(
                    BAD_ID,
                    f"id {char_id} reused with differing prompts {sorted(prompts)}",
                    indices,
                )
            )
    for i in range(len(book.characters)):
        for j in range(i + 1, len(book.characters)):
            frac = layout.overlap_fraction(
                book.characters[i].bbox, book.characters[j].bbox
            )
            if frac > overlap_threshold:
                violations.append(
                    Violation(
                        OVERLAP,
                        f"entries {i} and {j} overlap by {frac:.3f} "
                        f"(> {overlap_threshold})",
                        (i, j),
                    )
                )
    bg_words = _background_words(book.background_prompt)
    for i, entry in enumerate(book.characters):
        stem = _noun_stem(entry.noun)
        if stem and stem in bg_words:
            violations.append(
                Violation(
                    BACKGROUND_LEAK,
                    f"character noun '{entry.noun}' appears in the background prompt",
                    (i,),
                )
            )
    return violations


# ---------------------------------------------------------------------------
# Cross-turn diffing


def diff_characters(
    prev: Optional[PromptBook], cur: PromptBook
) -> dict[str, set[int]]:
    """Partition ids into new / retained / removed relative to the prior turn."""
    prev_ids = prev.ids() if prev is not None else set()
    cur_ids = cur.ids()
    return {
        "new_ids": cur_ids - prev_ids,
        "retained_ids": cur_ids & prev_ids,
        "removed_ids": prev_ids - cur_ids,
    }


# ---------------------------------------------------------------------------
# Global prompt


def _pluralize(noun: str) -> str:
    if noun in IRREGULAR_PLURALS:
        return IRREGULAR_PLURALS[noun]
    return noun + "s"


def _strip_article(prompt: str) -> str:
    words = prompt.split()
    if words and words[0].lower() in ARTICLES:
        words = words[1:]
    return " ".join(words)


def _count_phrase(count: int, prompt: str) -> str:
    """Render n identical entries as e.g. 'four spatulas'."""
    body = _strip_article(prompt)
    words = body.split()
    if words:
        words[-1] = _pluralize(words[-1])
    body = " ".join(words)
    count_word = COUNT_WORDS.get(count, str(count))
    return f"{count_word} {body}"


def build_global_prompt(book: PromptBook) -> str:
    """Concatenate character prompts then the background, ", "-joined.

    Duplicated ids (numeracy turns) collapse to a single counted phrase; the
    negative prompt never participates.
    """
    pieces: list[str] = []
    seen: set[int] = set()
    for entry in book.characters:
        if entry.id in seen:
            continue
        seen.add(entry.id)
        count = len(book.entries_for(entry.id))
        pieces.append(entry.prompt if count == 1 else _count_phrase(count, entry.prompt))
    if book.background_prompt.strip():
        pieces.append(book.background_prompt.strip())
    return ", ".join(pieces)


# ---------------------------------------------------------------------------
# JSON schema (benchmark dialogue field names: caption / objects / background
# / negative)


def book_to_json(book: PromptBook, caption: str = "") -> dict:
    payload = {
        "caption": caption,
        "objects": [[c.prompt, c.bbox.as_list(), c.id] for c in book.characters],
        "background": book.background_prompt,
        "negative": book.negative_prompt if book.negative_prompt else "None",
    }
    return payload


def book_from_json(payload: dict) -> tuple[PromptBook, str]:
    """Returns (book, caption). Raises ParseError on schema violations."""
    try:
        objects = payload["objects"]
        background = payload["background"]
        negative = payload.get("negative", "None")
    except (KeyError, TypeError) as exc:
        raise ParseError(f"turn json missing field: {exc}") from exc
    characters = []
    for k, obj in enumerate(objects):
        if not isinstance(obj, (list, tuple)) or len(obj) != 3:
            raise ParseError(f"object {k} must be [prompt, bbox, id]")
        prompt, bbox, char_id = obj
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise ParseError(f"object {k} bbox must hold 4 integers")
        if not isinstance(char_id, int) or isinstance(char_id, bool):
            raise ParseError(f"object {k} id must be an integer")
        characters.append(
            CharacterEntry(
                id=char_id,
                prompt=str(prompt),
                bbox=BoundingBox(*(int(v) for v in bbox)),
            )
        )
    if isinstance(negative, str) and negative.lower() == "none":
        negative = ""
    book = PromptBook(
        background_prompt=str(background),
        negative_prompt=str(negative),
        characters=tuple(characters),
    )
    return book, str(payload.get("caption", ""))


def turn_to_json(record: TurnRecord) -> dict:
    payload = book_to_json(record.prompt_book, caption=record.instruction)
    payload["image_ref"] = record.image_ref
    return payload


def turn_from_json(index: int, payload: dict) -> TurnRecord:
    book, caption = book_from_json(payload)
    return TurnRecord(
        index=index,
        instruction=caption,
        prompt_book=book,
        image_ref=str(payload.get("image_ref", "")),
    )


def session_to_json(session: DialogueSession) -> dict:
    return {
        "session_id": session.session_id,
        "seed": session.seed,
        "canvas": list(session.canvas),
        "turns": [turn_to_json(t) for t in session.turns],
    }


def session_from_json(payload: dict) -> DialogueSession:
    session = DialogueSession(
        session_id=str(payload["session_id"]),
        seed=int(payload["seed"]),
        canvas=tuple(payload.get("canvas", DEFAULT_CANVAS)),
    )
    for i, turn_payload in enumerate(payload.get("turns", []), start=1):
        session.turns.append(turn_from_json(i, turn_payload))
    return session


def dumps_session(session: DialogueSession) -> str:
    return json.dumps(session_to_json(session), indent=2, sort_keys=False)


def loads_session(text: str) -> DialogueSession:
    return session_from_json(json.loads(text))
