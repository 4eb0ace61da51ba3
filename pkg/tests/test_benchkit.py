from __future__ import annotations

import json
import time

import numpy as np
import pytest

from stagecraft.benchkit import (
    NUMBER_WORDS,
    RELATIONS,
    RepairFailure,
    SyntheticDialogueLlm,
    TemplateError,
    build_corpus,
    build_editing_prompt,
    build_prompt,
    build_story_prompt,
    correct_dialogue,
    dialogue_to_json,
    dumps_corpus,
    load_pools,
    loads_corpus,
    repair_format,
    sample_characters,
    validate_dialogue,
)
from stagecraft.benchkit.corrections import TURN_COUNT, TYPE_ORDER
from stagecraft.benchkit.synth import Selection
from stagecraft.layout import overlap_fraction

from conftest import load_fixture_dialogue


# ---------------------------------------------------------------------------
# pools and sampling


def test_pools_have_expected_sizes():
    pools = load_pools()
    assert len(pools.fruit) == 50
    assert len(pools.object) == 100
    assert len(pools.animal) == 35
    assert len(pools.human) == 7
    assert len(pools.background) == 50


def test_editing_sample_draws_from_documented_choices():
    pools = load_pools()
    sel = sample_characters(pools, "editing", rng_seed=3)
    assert sel.relation_pick in RELATIONS
    assert sel.number_pick in NUMBER_WORDS
    assert all(c in pools.editing_characters for c in sel.characters)
    assert sel.scene == "empty background"


def test_sampling_deterministic_under_seed():
    pools = load_pools()
    for task in ("story", "editing"):
        assert sample_characters(pools, task, 9) == sample_characters(pools, task, 9)


def test_story_sample_never_draws_objects_or_fruit():
    pools = load_pools()
    forbidden = set(pools.object) | set(pools.fruit)
    for seed in range(1000):
        sel = sample_characters(pools, "story", seed)
        assert not (set(sel.characters) & forbidden)


# ---------------------------------------------------------------------------
# templates


def test_editing_template_carries_constraint_literals():
    sel = Selection(
        task="editing",
        characters=("spatula", "pen"),
        scene="empty background",
        seed=0,
        number_pick="four",
        relation_pick="to the left of",
    )
    prompt = build_editing_prompt(sel)
    assert "four" in prompt
    assert "to the left of" in prompt
    assert "[spatula, pen]" in prompt


def test_story_template_carries_both_names():
    sel = Selection(task="story", characters=("girl", "dog"), scene="park", seed=0)
    prompt = build_story_prompt(sel)
    assert "a girl" in prompt and "a dog" in prompt
    assert "park" in prompt


def test_template_missing_fields_raises():
    incomplete = Selection(
        task="editing", characters=("pen", "mug"), scene="x", seed=0
    )
    with pytest.raises(TemplateError):
        build_editing_prompt(incomplete)
    with pytest.raises(TemplateError):
        build_story_prompt(incomplete)


def test_synthetic_writer_is_deterministic():
    sel = sample_characters(load_pools(), "editing", 5)
    prompt = build_prompt(sel)
    writer = SyntheticDialogueLlm()
    assert writer.complete(prompt) == writer.complete(prompt)


# ---------------------------------------------------------------------------
# repair


def _clean_dialogue_text() -> str:
    dialogue = load_fixture_dialogue("editing_dialogue.json")
    return json.dumps(dialogue_to_json(dialogue))


def test_repair_valid_text_is_identity():
    text = _clean_dialogue_text()
    dialogue, report = repair_format(text)
    assert report.passes_applied == []
    assert report.diagnostics[0] == {"pass": "strict", "ok": True}
    assert len(dialogue.turns) == 4


def test_repair_unclosed_bracket():
    text = _clean_dialogue_text()
    last = text.rfind("]")
    broken = text[:last] + text[last + 1:]
    dialogue, report = repair_format(broken)
    assert "brackets" in report.passes_applied
    assert len(dialogue.turns) == 4


def test_repair_full_width_punctuation():
    text = _clean_dialogue_text().replace(",", "，", 3)
    dialogue, report = repair_format(text)
    assert "punctuation" in report.passes_applied
    assert len(dialogue.turns) == 4


def test_repair_python_style_quotes():
    text = _clean_dialogue_text()
    python_style = repr(json.loads(text))
    dialogue, report = repair_format(python_style)
    assert "quoting" in report.passes_applied
    assert len(dialogue.turns) == 4


def test_repair_failure_carries_per_pass_diagnostics():
    with pytest.raises(RepairFailure) as info:
        repair_format("utterly hopeless {{{ text")
    passes = [d["pass"] for d in info.value.diagnostics]
    assert passes == ["strict", "punctuation", "quoting", "brackets"]


def test_repair_passes_are_toggleable():
    text = _clean_dialogue_text().replace(",", "，", 1)
    with pytest.raises(RepairFailure):
        repair_format(text, enabled_passes={"brackets"})
    dialogue, _ = repair_format(text, enabled_passes={"punctuation"})
    assert len(dialogue.turns) == 4


def test_flawed_writer_output_survives_repair():
    sel = sample_characters(load_pools(), "editing", 12)
    writer = SyntheticDialogueLlm(flaw_rate=1.0, seed=0)
    raw = writer.complete(build_prompt(sel))
    dialogue, report = repair_format(raw)
    assert len(dialogue.turns) == 4
    assert report.passes_applied, "a flaw should have required at least one pass"


# ---------------------------------------------------------------------------
# corrections


def test_correct_dialogue_disperses_overlap():
    dialogue = load_fixture_dialogue("editing_dialogue.json")
    payload = dialogue_to_json(dialogue)
    # force a hard overlap in turn 1
    payload["turn 1"]["objects"] = [
        ["a pen", [100, 100, 200, 200], 1],
        ["a spatula", [140, 140, 200, 200], 2],
    ]
    from stagecraft.benchkit import dialogue_from_json

    broken = dialogue_from_json(payload)
    fixed, report = correct_dialogue(broken, overlap_threshold=0.25, rng_seed=3)
    moves = [e for e in report.entries if e["action"] == "disperse"]
    assert len(moves) == 1 and moves[0]["turn"] == 1
    boxes = [c.bbox for c in fixed.turns[0].book.characters]
    assert overlap_fraction(boxes[0], boxes[1]) <= 0.25
    assert [(b.w, b.h) for b in boxes] == [(200, 200), (200, 200)]
    assert [t.caption for t in fixed.turns] == [t.caption for t in broken.turns]


def test_correct_dialogue_clean_is_identity():
    dialogue = load_fixture_dialogue("editing_dialogue.json")
    fixed, report = correct_dialogue(dialogue, rng_seed=1)
    assert not report
    assert fixed == dialogue


def test_correct_dialogue_flags_infeasible_layout():
    payload = dialogue_to_json(load_fixture_dialogue("editing_dialogue.json"))
    payload["turn 1"]["objects"] = [
        ["a pen", [0, 0, 512, 512], 1],
        ["a spatula", [0, 0, 512, 512], 2],
    ]
    from stagecraft.benchkit import dialogue_from_json

    broken = dialogue_from_json(payload)
    _fixed, report = correct_dialogue(broken, rng_seed=1)
    assert any(e["action"] == "regenerate_layout" for e in report.entries)
    assert report.needs_regeneration


def test_correct_dialogue_flags_background_leak():
    payload = dialogue_to_json(load_fixture_dialogue("editing_dialogue.json"))
    payload["turn 1"]["background"] = "a desk with a pen"
    from stagecraft.benchkit import dialogue_from_json

    leaky = dialogue_from_json(payload)
    _fixed, report = correct_dialogue(leaky, rng_seed=1)
    leaks = [e for e in report.entries if e["action"] == "background_leak"]
    assert leaks and leaks[0]["noun"] == "pen"
    assert report.needs_regeneration


# ---------------------------------------------------------------------------
# validation


def test_validate_fixture_editing_dialogue_clean():
    dialogue = load_fixture_dialogue("editing_dialogue.json")
    assert validate_dialogue(dialogue, task="editing") == []


def test_validate_fixture_story_dialogue_clean():
    dialogue = load_fixture_dialogue("story_dialogue.json")
    assert validate_dialogue(dialogue, task="story") == []


def test_validate_three_turn_dialogue_flags_count():
    payload = dialogue_to_json(load_fixture_dialogue("editing_dialogue.json"))
    del payload["turn 4"]
    from stagecraft.benchkit import dialogue_from_json

    short = dialogue_from_json(payload)
    kinds = {v.kind for v in validate_dialogue(short, task="editing")}
    assert TURN_COUNT in kinds


def test_validate_negative_round_out_of_order():
    payload = dialogue_to_json(load_fixture_dialogue("editing_dialogue.json"))
    # swap turn 2 (attribute) and turn 3 (negative)
    payload["turn 2"], payload["turn 3"] = payload["turn 3"], payload["turn 2"]
    from stagecraft.benchkit import dialogue_from_json

    swapped = dialogue_from_json(payload)
    kinds = {v.kind for v in validate_dialogue(swapped, task="editing")}
    assert TYPE_ORDER in kinds


def test_validate_task_inference():
    editing = load_fixture_dialogue("editing_dialogue.json")
    story = load_fixture_dialogue("story_dialogue.json")
    assert validate_dialogue(editing) == []
    assert validate_dialogue(story) == []


# ---------------------------------------------------------------------------
# corpus builder


def test_corpus_twenty_dialogues_valid_and_deterministic():
    start = time.time()
    for task in ("story", "editing"):
        dialogues, _report = build_corpus(task, 20, seed=42)
        assert len(dialogues) == 20
        for d in dialogues:
            assert validate_dialogue(d, task) == []
        again, _ = build_corpus(task, 20, seed=42)
        assert dumps_corpus(dialogues) == dumps_corpus(again)
        different, _ = build_corpus(task, 20, seed=43)
        assert dumps_corpus(dialogues) != dumps_corpus(different)
    assert time.time() - start < 30.0


def test_editing_corpus_exhibits_fixed_round_order():
    dialogues, _ = build_corpus("editing", 10, seed=1)
    for d in dialogues:
        books = [t.book for t in d.turns]
        assert not books[0].negative_prompt
        prompts1 = {c.id: c.prompt for c in books[0].characters}
        prompts2 = {c.id: c.prompt for c in books[1].characters}
        assert set(prompts1) == set(prompts2)
        assert any(prompts2[i] != prompts1[i] for i in prompts2)
        assert books[2].negative_prompt
        assert set(c.id for c in books[2].characters) < set(prompts2)
        ids4 = [c.id for c in books[3].characters]
        assert any(ids4.count(i) >= 2 for i in set(ids4))


def test_corpus_json_round_trip():
    dialogues, _ = build_corpus("story", 3, seed=2)
    text = dumps_corpus(dialogues)
    corpus = loads_corpus(text)
    assert list(corpus) == ["dialogue 1", "dialogue 2", "dialogue 3"]
    assert dumps_corpus(list(corpus.values())) == text
