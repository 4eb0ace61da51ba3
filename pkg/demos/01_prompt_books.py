"""Prompt books: the structured scene plan behind every turn.

A prompt book lists the background prompt, the negative prompt, and one
(id, prompt, bounding box) entry per foreground character. This demo walks
through parsing the text grammar, validation, cross-turn diffing, and the
global prompt that the final render conditions on.
"""
from stagecraft.promptbook import (
    build_global_prompt,
    diff_characters,
    parse_prompt_book,
    serialize_prompt_book,
    validate,
)

TURN_1 = """\
Characters: [("a pen", [97, 235, 162, 222], 1), ("a spatula", [217, 55, 198, 232], 2)]
Background prompt: empty background
Negative prompt: None"""

TURN_3 = """\
Characters: [("a spatula", [157, 140, 198, 232], 2)]
Background prompt: empty background
Negative prompt: a blue pen"""

book1 = parse_prompt_book(TURN_1)
print("turn 1 characters:")
for c in book1.characters:
    print(f"  id={c.id}  {c.prompt!r}  box={c.bbox.as_list()}")

# the text grammar round-trips exactly
assert parse_prompt_book(serialize_prompt_book(book1)) == book1
print("round trip: exact")

# validation returns violations as data, never exceptions
print("violations on a clean book:", validate(book1))

oversized = parse_prompt_book(
    'Characters: [("a whale", [400, 400, 200, 200], 1)]\n'
    "Background prompt: the open sea\nNegative prompt: None"
)
for v in validate(oversized):
    print("violation:", v.kind, "-", v.message)

# diffing tracks identity across turns: the pen (id 1) disappears in turn 3
book3 = parse_prompt_book(TURN_3)
print("turn 1 -> turn 3 diff:", diff_characters(book1, book3))

# the global prompt concatenates characters then background; duplicated ids
# (numeracy edits) collapse to a counted plural
print("global prompt, turn 1:", build_global_prompt(book1))

QUAD = """\
Characters: [("a spatula", [4, 20, 198, 232], 2), ("a spatula", [219, 20, 198, 232], 2), ("a spatula", [85, 260, 198, 232], 2), ("a spatula", [310, 260, 198, 232], 2)]
Background prompt: empty background
Negative prompt: None"""
print("global prompt, numeracy turn:", build_global_prompt(parse_prompt_book(QUAD)))
