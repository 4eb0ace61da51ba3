from __future__ import annotations

import numpy as np
import pytest

from stagecraft.backends import (
    DimensionMismatch,
    PatternDetector,
    PatternEmbedder,
    RuleTableDetector,
    ToyDiffusionBackend,
    cosine,
    prompt_target,
)
from stagecraft.backends.vision import RectangleSegmenter
from stagecraft.imaging import bilinear_resize, to_uint8
from stagecraft.promptbook import BoundingBox


def test_planted_exact_pattern_recovered_with_near_one_confidence():
    # plant the prompt's own field, grid-aligned, sampled at the window size
    grid = np.full((64, 64), 0.5)
    x, y, w, h = 12, 20, 29, 26
    grid[y: y + h, x: x + w] = prompt_target("a pen", (h, w))
    canvas = np.repeat(np.repeat(to_uint8(grid), 8, axis=0), 8, axis=1)
    detector = PatternDetector()
    detections = detector.detect(canvas, "a pen")
    assert detections, "planted pattern not found"
    best = detections[0]
    assert best.confidence > 0.97
    assert best.box.as_list() == [x * 8, y * 8, w * 8, h * 8]


def test_planted_resampled_pattern_still_detected():
    # the realistic path: pattern resized through canvas resolution
    canvas = np.full((512, 512), 0.5)
    x, y, w, h = 96, 160, 240, 192
    canvas[y: y + h, x: x + w] = bilinear_resize(
        prompt_target("a pen", (64, 64)), (h, w)
    )
    detections = PatternDetector().detect(to_uint8(canvas), "a pen")
    assert detections
    best = detections[0]
    assert best.confidence > 0.6
    assert abs(best.box.x - x) <= 16 and abs(best.box.y - y) <= 16
    assert abs(best.box.w - w) <= 32 and abs(best.box.h - h) <= 32


def test_blank_image_yields_no_detections():
    detector = PatternDetector()
    assert detector.detect(np.full((512, 512), 128, dtype=np.uint8), "a pen") == []


def test_unrelated_content_stays_below_threshold():
    backend = ToyDiffusionBackend()
    image = backend.generate("a wooden chair", seed=3)
    detector = PatternDetector()
    assert detector.detect(image, "a golden retriever") == []


def test_rule_table_detector_passthrough():
    box = BoundingBox(10, 20, 30, 40)
    detector = RuleTableDetector({"a pen": [(box, 0.8)]})
    hits = detector.detect(np.zeros((64, 64), dtype=np.uint8), "a pen")
    assert len(hits) == 1
    assert hits[0].box == box and hits[0].confidence == 0.8
    assert detector.detect(np.zeros((64, 64), dtype=np.uint8), "a mug") == []


def test_rule_table_detector_sorts_by_confidence():
    rules = {
        "a pen": [
            (BoundingBox(0, 0, 10, 10), 0.6),
            (BoundingBox(20, 20, 10, 10), 0.8),
        ]
    }
    hits = RuleTableDetector(rules).detect(np.zeros((32, 32), dtype=np.uint8), "a pen")
    assert [h.confidence for h in hits] == [0.8, 0.6]


def test_numeracy_multiple_instances_counted():
    backend = ToyDiffusionBackend()
    onstage = backend.encode(backend.generate("a spatula", seed=7))
    canvas = np.full((512, 512), 0.5)
    boxes = [(4, 20, 198, 232), (219, 20, 198, 232), (85, 260, 198, 232), (310, 260, 198, 232)]
    for x, y, w, h in boxes:
        canvas[y: y + h, x: x + w] = bilinear_resize(onstage, (h, w))
    detector = PatternDetector()
    hits = detector.detect(to_uint8(canvas), "a spatula")
    assert len(hits) == 4


def test_rectangle_segmenter_shape():
    mask = RectangleSegmenter().segment(
        np.zeros((512, 512), dtype=np.uint8), BoundingBox(5, 6, 70, 80)
    )
    assert mask.shape == (80, 70)
    assert mask.all()


# ---------------------------------------------------------------------------
# embedder


def test_embed_identical_images_cosine_one():
    embedder = PatternEmbedder()
    image = ToyDiffusionBackend().generate("a mug", seed=5)
    assert cosine(embedder.embed_image(image), embedder.embed_image(image)) == pytest.approx(1.0)


def test_embed_image_matches_its_own_prompt():
    backend = ToyDiffusionBackend()
    embedder = PatternEmbedder()
    image = backend.generate("a crimson kite", seed=2)
    sim = cosine(embedder.embed_image(image), embedder.embed_text("a crimson kite"))
    assert sim > 0.9


def test_embed_unrelated_prompt_low_similarity():
    backend = ToyDiffusionBackend()
    embedder = PatternEmbedder()
    image = backend.generate("a crimson kite", seed=2)
    sim = cosine(embedder.embed_image(image), embedder.embed_text("a wooden chair"))
    assert abs(sim) < 0.3


def test_embeddings_are_unit_norm():
    embedder = PatternEmbedder()
    rng = np.random.default_rng(0)
    for _ in range(5):
        vec = embedder.embed_image(rng.integers(0, 255, (100, 130)).astype(np.uint8))
        assert np.linalg.norm(vec) == pytest.approx(1.0)
    assert np.linalg.norm(embedder.embed_text("a pen")) == pytest.approx(1.0)


def test_constant_image_embeds_to_stable_fallback():
    embedder = PatternEmbedder()
    a = embedder.embed_image(np.full((64, 64), 7, dtype=np.uint8))
    b = embedder.embed_image(np.full((32, 32), 200, dtype=np.uint8))
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)


def test_cosine_dimension_mismatch_raises():
    with pytest.raises(DimensionMismatch):
        cosine(np.ones(4), np.ones(5))
