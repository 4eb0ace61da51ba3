from __future__ import annotations

import math

import numpy as np
import pytest

from stagecraft.backends import RuleTableDetector
from stagecraft.evaluator import (
    DegenerateSet,
    LengthMismatch,
    NoPairs,
    UnknownCountWord,
    UnknownRelation,
    accs,
    afid,
    atis,
    check_alignment,
    check_attribute,
    check_negative,
    check_numeracy,
    check_spatial,
    collect_references,
    evaluate_dialogue,
)
from stagecraft.promptbook import BoundingBox

from conftest import load_fixture_dialogue


class StubEmbedder:
    """Maps the first pixel value of an image, or a text label, to a fixed
    unit vector; lets similarity arithmetic be tested exactly."""

    def __init__(self, image_vectors: dict[int, np.ndarray], text_vectors: dict[str, np.ndarray]):
        self.image_vectors = image_vectors
        self.text_vectors = text_vectors

    def embed_image(self, image):
        return self.image_vectors[int(np.asarray(image).ravel()[0])]

    def embed_text(self, text):
        return self.text_vectors[text]


def unit(*values):
    v = np.array(values, dtype=np.float64)
    return v / np.linalg.norm(v)


def tagged_image(tag: int):
    return np.full((8, 8), tag, dtype=np.uint8)


# ---------------------------------------------------------------------------
# accs / atis


def test_accs_identical_pairs_is_100():
    embedder = StubEmbedder({1: unit(1, 0)}, {})
    pairs = [(tagged_image(1), tagged_image(1))] * 3
    assert accs(pairs, embedder) == pytest.approx(100.0)


def test_accs_orthogonal_is_zero():
    embedder = StubEmbedder({1: unit(1, 0), 2: unit(0, 1)}, {})
    assert accs([(tagged_image(1), tagged_image(2))], embedder) == pytest.approx(0.0)


def test_accs_mean_arithmetic_exact():
    # cosines 0.8 and 0.6 -> mean 0.7 -> 70
    embedder = StubEmbedder(
        {
            1: unit(1, 0),
            2: unit(0.8, 0.6),
            3: unit(0.6, 0.8),
        },
        {},
    )
    pairs = [(tagged_image(2), tagged_image(1)), (tagged_image(3), tagged_image(1))]
    assert accs(pairs, embedder) == pytest.approx(70.0)


def test_accs_empty_raises():
    with pytest.raises(NoPairs):
        accs([], StubEmbedder({}, {}))


def test_accs_duplicate_pair_moves_mean_exactly():
    embedder = StubEmbedder({1: unit(1, 0), 2: unit(0.8, 0.6)}, {})
    one = accs([(tagged_image(2), tagged_image(1))], embedder)
    two = accs(
        [(tagged_image(2), tagged_image(1)), (tagged_image(2), tagged_image(1))],
        embedder,
    )
    assert one == pytest.approx(two)


def test_atis_alignment_and_errors(bundle):
    backend_image = None
    from stagecraft.backends import ToyDiffusionBackend

    backend = ToyDiffusionBackend()
    image = backend.generate("a crimson kite", seed=2)
    score = atis([image], ["a crimson kite"], bundle.embedder)
    assert score > 90.0
    unrelated = atis([image], ["a wooden chair"], bundle.embedder)
    assert unrelated < 30.0
    with pytest.raises(LengthMismatch):
        atis([image], [], bundle.embedder)
    with pytest.raises(NoPairs):
        atis([], [], bundle.embedder)


def test_accs_atis_bounded(bundle):
    from stagecraft.backends import ToyDiffusionBackend

    backend = ToyDiffusionBackend()
    images = [backend.generate(f"a thing {i}", seed=i) for i in range(3)]
    pairs = [(images[0], images[1]), (images[1], images[2])]
    value = accs(pairs, bundle.embedder)
    assert -100.0 <= value <= 100.0
    tvalue = atis(images, ["a pen", "a mug", "a hat"], bundle.embedder)
    assert -100.0 <= tvalue <= 100.0


# ---------------------------------------------------------------------------
# afid


def test_afid_identical_sets_zero():
    rng = np.random.default_rng(0)
    features = rng.standard_normal((12, 6))
    assert afid(features, features) == pytest.approx(0.0, abs=1e-6)


def test_afid_scalar_gaussian_closed_form():
    # sample stats (ddof=1): A has mean 0, var 1; B has mean 1, var 4
    a = np.array([[-math.sqrt(0.5)], [math.sqrt(0.5)]])
    b = np.array([[1.0 - math.sqrt(2.0)], [1.0 + math.sqrt(2.0)]])
    # closed form: |0-1|^2 + (1 + 4 - 2*sqrt(1*4)) = 1 + 1 = 2
    assert afid(a, b) == pytest.approx(2.0, abs=1e-9)


def test_afid_equal_covariance_reduces_to_mean_distance():
    rng = np.random.default_rng(1)
    base = rng.standard_normal((20, 4))
    shift = np.array([0.5, -1.0, 2.0, 0.25])
    expected = float(shift @ shift)
    assert afid(base, base + shift) == pytest.approx(expected, abs=1e-6)


def test_afid_symmetric():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((15, 5))
    b = rng.standard_normal((18, 5)) * 1.5 + 0.3
    assert afid(a, b) == pytest.approx(afid(b, a), abs=1e-8)


def test_afid_degenerate_sets_rejected():
    with pytest.raises(DegenerateSet):
        afid(np.ones((1, 3)), np.ones((5, 3)))
    with pytest.raises(LengthMismatch):
        afid(np.ones((3, 3)), np.ones((3, 4)))


def test_afid_nonnegative_on_random_sets():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.standard_normal((rng.integers(2, 10), 4))
        b = rng.standard_normal((rng.integers(2, 10), 4))
        assert afid(a, b) >= -1e-9


# ---------------------------------------------------------------------------
# alignment checks


def test_spatial_appendix_boxes_down_of():
    pen = BoundingBox(97, 235, 162, 222)       # center y = 346
    spatula = BoundingBox(217, 55, 198, 232)   # center y = 171
    assert check_spatial(pen, spatula, "down")
    assert not check_spatial(spatula, pen, "down")


def test_spatial_identical_boxes_fail_and_left_pass():
    box = BoundingBox(10, 10, 50, 50)
    assert not check_spatial(box, box, "left")
    assert check_spatial(BoundingBox(0, 0, 20, 20), BoundingBox(380, 0, 20, 20), "left")


def test_spatial_relation_duality():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a = BoundingBox(*(int(v) for v in rng.integers(0, 300, 2)), 50, 50)
        b = BoundingBox(*(int(v) for v in rng.integers(0, 300, 2)), 50, 50)
        assert check_spatial(a, b, "left") == check_spatial(b, a, "right")
        assert check_spatial(a, b, "top") == check_spatial(b, a, "down")


def test_spatial_unknown_relation():
    box = BoundingBox(0, 0, 10, 10)
    with pytest.raises(UnknownRelation):
        check_spatial(box, box, "beside")


def test_attribute_comparative_similarity():
    embedder = StubEmbedder(
        {1: unit(0.9, 0.1), 2: unit(0.1, 0.9)},
        {"a blue pen": unit(1, 0), "a pen": unit(0, 1)},
    )
    assert check_attribute(tagged_image(1), "a pen", "a blue pen", embedder)
    assert not check_attribute(tagged_image(2), "a pen", "a blue pen", embedder)


def test_attribute_tie_fails():
    embedder = StubEmbedder(
        {1: unit(1, 1)},
        {"a blue pen": unit(1, 0), "a pen": unit(0, 1)},
    )
    assert not check_attribute(tagged_image(1), "a pen", "a blue pen", embedder)


def test_negative_threshold_semantics():
    image = np.zeros((64, 64), dtype=np.uint8)
    absent = RuleTableDetector({})
    assert check_negative(image, "a blue pen", absent)
    strong = RuleTableDetector({"a blue pen": [(BoundingBox(0, 0, 10, 10), 0.7)]})
    assert not check_negative(image, "a blue pen", strong)
    weak = RuleTableDetector({"a blue pen": [(BoundingBox(0, 0, 10, 10), 0.49)]})
    assert check_negative(image, "a blue pen", weak)


def test_numeracy_exact_count():
    assert check_numeracy(4, "four")
    assert not check_numeracy(3, "four")
    assert not check_numeracy(5, "four")
    with pytest.raises(UnknownCountWord):
        check_numeracy(4, "several")


# ---------------------------------------------------------------------------
# reference collection


def test_collect_references_earliest_turn_rule():
    dialogue = load_fixture_dialogue("editing_dialogue.json")
    images = [np.full((512, 512), 40 + i, dtype=np.uint8) for i in range(4)]
    rules = {
        "a pen": [(BoundingBox(97, 235, 162, 222), 0.9)],
        "a blue pen": [(BoundingBox(97, 235, 162, 222), 0.9)],
        "a spatula": [(BoundingBox(217, 55, 198, 232), 0.9)],
    }
    tracks, misses = collect_references(images, dialogue, RuleTableDetector(rules))
    assert not misses
    assert tracks[1].reference_turn == 1
    assert len(tracks[1].comparands) == 1  # pen appears in turns 1-2
    assert tracks[2].reference_turn == 1
    assert len(tracks[2].comparands) == 3  # spatula in all four turns
    # earliest crop pixels come from the turn-1 image
    assert tracks[2].reference[0, 0] == 40


def test_collect_references_singleton_and_missing():
    dialogue = load_fixture_dialogue("editing_dialogue.json")
    images = [np.zeros((512, 512), dtype=np.uint8)] * 4
    rules = {"a spatula": [(BoundingBox(217, 55, 198, 232), 0.9)]}
    tracks, misses = collect_references(images, dialogue, RuleTableDetector(rules))
    assert 1 not in tracks  # pen never detected
    assert {m["id"] for m in misses} == {1}
    assert len(tracks[2].comparands) == 3


def test_collect_references_length_mismatch():
    dialogue = load_fixture_dialogue("editing_dialogue.json")
    with pytest.raises(LengthMismatch):
        collect_references([np.zeros((8, 8))], dialogue, RuleTableDetector({}))


# ---------------------------------------------------------------------------
# end-to-end alignment on the fixture dialogue


def test_alignment_ground_truth_on_editing_fixture(bundle, editing_dialogue, editing_replay):
    _session, artifacts = editing_replay
    images = [a.image for a in artifacts]
    result = check_alignment(images, editing_dialogue, bundle.detector, bundle.embedder)
    assert result.as_dict() == {
        "spatial": True,
        "attribute": True,
        "negative": True,
        "numeracy": True,
    }


def test_evaluate_dialogue_populates_scores(bundle, editing_dialogue, editing_replay):
    _session, artifacts = editing_replay
    images = [a.image for a in artifacts]
    score = evaluate_dialogue(
        "dialogue 1", editing_dialogue, images, bundle.detector, bundle.embedder
    )
    assert score.accs is not None and -100 <= score.accs <= 100
    assert score.atis is not None and score.atis > 30
    assert score.alignment is not None
    assert score.detection_misses == 0
