from __future__ import annotations

import numpy as np
import pytest

from stagecraft.backends import ScriptedLlmClient, ToyDiffusionBackend
from stagecraft.orchestrator import ScriptError, TurnDeps, replay_session, run_turn
from stagecraft.performance import GuidedRunConfig
from stagecraft.promptbook import DialogueSession, serialize_prompt_book
from stagecraft.rehearsal import ReferenceStore
from stagecraft.screenwriter import DesignFailure

from conftest import load_fixture_dialogue, replay_dialogue


def make_deps(bundle, responses, store=None):
    return TurnDeps(
        llm=ScriptedLlmClient(responses),
        diffusion=bundle.diffusion,
        detector=bundle.detector,
        segmenter=bundle.segmenter,
        store=store or ReferenceStore(None),
    )


def test_editing_replay_matches_ground_truth_structure(editing_replay):
    session, artifacts = editing_replay
    assert len(session.turns) == 4
    assert [t.index for t in session.turns] == [1, 2, 3, 4]
    # the removed pen (id 1) is absent from turn 3
    assert sorted(session.turns[2].prompt_book.ids()) == [2]
    # turn 4 holds four entries all sharing id 2
    ids4 = [c.id for c in session.turns[3].prompt_book.characters]
    assert ids4 == [2, 2, 2, 2]


def test_duplicate_ids_share_one_reference_and_onstage(editing_replay):
    _session, artifacts = editing_replay
    final = artifacts[3]
    assert set(final.references) == {2}
    assert set(final.onstage) == {2}
    # but all four boxes were composed
    assert len(final.bundle.per_char_masks) == 4


def test_reference_bytes_frozen_across_turns(bundle, editing_dialogue):
    store = ReferenceStore(None)
    deps = make_deps(
        bundle, [serialize_prompt_book(t.book) for t in editing_dialogue.turns], store
    )
    cfg = GuidedRunConfig(steps=50, ratio=0.1, canvas=(512, 512))
    session = DialogueSession(session_id="s", seed=11)
    first = run_turn(session, editing_dialogue.turns[0].caption, deps, cfg)
    ref_bytes_turn1 = store.get_bytes("s", 1)
    run_turn(session, editing_dialogue.turns[1].caption, deps, cfg)
    assert store.get_bytes("s", 1) == ref_bytes_turn1
    # retained id keeps the identical array too
    assert np.array_equal(first.references[1], store.get("s", 1))


def test_reference_creation_count_equals_union_of_new_ids(bundle, editing_dialogue):
    store = ReferenceStore(None)
    deps = make_deps(
        bundle, [serialize_prompt_book(t.book) for t in editing_dialogue.turns], store
    )
    cfg = GuidedRunConfig(steps=50, ratio=0.1, canvas=(512, 512))
    session = DialogueSession(session_id="s", seed=11)
    for turn in editing_dialogue.turns:
        run_turn(session, turn.caption, deps, cfg)
    assert store.ids_for("s") == {1, 2}


def test_failed_turn_leaves_session_and_store_untouched(bundle, editing_dialogue):
    store = ReferenceStore(None)
    books = [serialize_prompt_book(t.book) for t in editing_dialogue.turns[:2]]
    # turn 3 fails all three designer attempts
    deps = make_deps(bundle, books + ["junk", "junk", "junk"], store)
    cfg = GuidedRunConfig(steps=50, ratio=0.1, canvas=(512, 512))
    session = DialogueSession(session_id="s", seed=11)
    run_turn(session, "turn one", deps, cfg)
    run_turn(session, "turn two", deps, cfg)
    ids_after_two = store.ids_for("s")
    with pytest.raises(DesignFailure):
        run_turn(session, "turn three", deps, cfg)
    assert len(session.turns) == 2
    assert store.ids_for("s") == ids_after_two


def test_replay_deterministic_bytes(bundle, editing_dialogue):
    _s1, arts1 = replay_dialogue(editing_dialogue, bundle, seed=11)
    _s2, arts2 = replay_dialogue(editing_dialogue, bundle, seed=11)
    for a, b in zip(arts1, arts2):
        assert np.array_equal(a.image, b.image)


def test_story_replay_introduces_ids_in_ground_truth_order(bundle, story_dialogue):
    session, artifacts = replay_dialogue(story_dialogue, bundle, seed=7)
    assert len(session.turns) == 4
    seen: list[set[int]] = [set(t.prompt_book.ids()) for t in session.turns]
    assert seen[0] == {1, 2}
    assert seen[1] == {1, 3}
    assert seen[2] == {1, 3, 4}
    assert seen[3] == {1, 3, 4}
    # every id got exactly one reference, created at first appearance
    all_ids = set().union(*seen)
    assert all_ids == {1, 2, 3, 4}


def test_empty_script_rejected(bundle):
    deps = make_deps(bundle, [])
    with pytest.raises(ScriptError):
        replay_session([], deps, GuidedRunConfig())


def test_partial_session_attached_to_error(bundle, editing_dialogue):
    books = [serialize_prompt_book(t.book) for t in editing_dialogue.turns[:1]]
    deps = make_deps(bundle, books + ["junk", "junk", "junk"])
    with pytest.raises(DesignFailure) as info:
        replay_session(
            [t.caption for t in editing_dialogue.turns[:2]],
            deps,
            GuidedRunConfig(steps=50, ratio=0.1),
        )
    partial = info.value.partial_session
    assert len(partial.turns) == 1


def test_overlapping_design_gets_dispersed(bundle):
    overlapping = (
        'Characters: [("a pen", [100, 100, 150, 150], 1), ("a mug", [110, 110, 150, 150], 2)]\n'
        "Background prompt: a desk\nNegative prompt: None"
    )
    deps = make_deps(bundle, [overlapping])
    session = DialogueSession(session_id="s", seed=3)
    cfg = GuidedRunConfig(steps=50, ratio=0.1)
    artifact = run_turn(session, "two things", deps, cfg)
    assert artifact.dispersed
    from stagecraft.layout import overlap_fraction

    boxes = [c.bbox for c in artifact.record.prompt_book.characters]
    assert overlap_fraction(boxes[0], boxes[1]) <= 0.25
    assert {(b.w, b.h) for b in boxes} == {(150, 150)}
