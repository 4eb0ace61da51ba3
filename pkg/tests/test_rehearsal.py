from __future__ import annotations

import numpy as np
import pytest

from stagecraft.backends import (
    DimensionMismatch,
    RuleTableDetector,
    ToyDiffusionBackend,
)
from stagecraft.backends.vision import RectangleSegmenter
from stagecraft.imaging import bilinear_resize, nearest_resize, to_float01
from stagecraft.promptbook import BoundingBox, CharacterEntry
from stagecraft.rehearsal import (
    Cutout,
    MidStateImage,
    NoDetection,
    ReferenceStore,
    StoreError,
    build_guidance,
    compose_midstate,
    cutout_or_full,
    extract_cutout,
    extract_latent_guidance,
    extract_lineart,
    generate_onstage,
    get_or_create_reference,
    union_masks,
)


def entry(char_id, prompt, box):
    return CharacterEntry(id=char_id, prompt=prompt, bbox=BoundingBox(*box))


class CountingBackend(ToyDiffusionBackend):
    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.generate_calls = 0

    def generate(self, *args, **kwargs):
        self.generate_calls += 1
        return super().generate(*args, **kwargs)


# ---------------------------------------------------------------------------
# reference store


def test_reference_created_once_and_persisted(tmp_path):
    store = ReferenceStore(tmp_path)
    backend = CountingBackend()
    lion = entry(3, "an attentive lion", (300, 221, 162, 180))
    image = get_or_create_reference("s1", lion, backend, store, seed=1)
    assert backend.generate_calls == 1
    assert (tmp_path / "s1" / "3.png").exists()
    again = get_or_create_reference("s1", lion, backend, store, seed=1)
    assert backend.generate_calls == 1, "second call must not hit the backend"
    assert np.array_equal(image, again)


def test_reference_write_once_enforced(tmp_path):
    store = ReferenceStore(tmp_path)
    store.put("s1", 1, np.zeros((8, 8), dtype=np.uint8))
    with pytest.raises(StoreError):
        store.put("s1", 1, np.ones((8, 8), dtype=np.uint8))


def test_same_prompt_different_id_gets_distinct_entries(tmp_path):
    store = ReferenceStore(tmp_path)
    backend = CountingBackend()
    a = get_or_create_reference("s1", entry(1, "a pen", (0, 0, 10, 10)), backend, store, seed=1)
    b = get_or_create_reference("s1", entry(2, "a pen", (0, 0, 10, 10)), backend, store, seed=2)
    assert backend.generate_calls == 2
    assert store.ids_for("s1") == {1, 2}
    assert not np.array_equal(a, b), "different seeds produce different references"


def test_reference_store_reload_round_trips(tmp_path):
    store = ReferenceStore(tmp_path)
    image = ToyDiffusionBackend().generate("a pen", seed=0)
    store.put("s1", 1, image)
    reopened = ReferenceStore(tmp_path)
    assert np.array_equal(reopened.get("s1", 1), image)
    assert reopened.get_bytes("s1", 1) == store.get_bytes("s1", 1)


# ---------------------------------------------------------------------------
# on-stage generation


def test_generate_onstage_without_reference_is_plain_prompt():
    backend = ToyDiffusionBackend()
    image = generate_onstage(entry(1, "a pen", (0, 0, 10, 10)), None, backend, seed=3)
    assert np.array_equal(image, backend.generate(prompt="a pen", seed=3))


def test_generate_onstage_with_reference_blends():
    backend = ToyDiffusionBackend()
    reference = backend.generate("a pen", seed=21)
    out = generate_onstage(entry(1, "a blue pen", (0, 0, 10, 10)), reference, backend, seed=4)
    w = backend.adapter_prompt_weight
    blend = w * backend.pattern("a blue pen") + (1 - w) * backend.encode(reference)

    def corr(a, b):
        ac, bc = a - a.mean(), b - b.mean()
        return float((ac * bc).sum() / np.sqrt((ac ** 2).sum() * (bc ** 2).sum()))

    assert corr(backend.encode(out), blend) > 0.95


def test_generate_onstage_deterministic():
    backend = ToyDiffusionBackend()
    ref = backend.generate("a pen", seed=21)
    e = entry(1, "a blue pen", (0, 0, 10, 10))
    assert np.array_equal(
        generate_onstage(e, ref, backend, seed=5),
        generate_onstage(e, ref, backend, seed=5),
    )


# ---------------------------------------------------------------------------
# cutouts


def test_extract_cutout_uses_scripted_box():
    image = np.arange(512 * 512, dtype=np.float64).reshape(512, 512)
    image = (image / image.max() * 255).astype(np.uint8)
    box = BoundingBox(128, 128, 256, 256)
    detector = RuleTableDetector({"a pen": [(box, 0.9)]})
    cutout = extract_cutout(image, "a pen", detector, RectangleSegmenter())
    assert cutout.image.shape == (256, 256)
    assert np.array_equal(cutout.image, image[128:384, 128:384])
    assert cutout.mask.all()


def test_extract_cutout_no_detection_raises():
    detector = RuleTableDetector({})
    with pytest.raises(NoDetection):
        extract_cutout(np.zeros((64, 64), dtype=np.uint8), "a pen", detector, RectangleSegmenter())


def test_extract_cutout_picks_highest_confidence():
    rules = {
        "a pen": [
            (BoundingBox(0, 0, 64, 64), 0.8),
            (BoundingBox(128, 128, 64, 64), 0.6),
        ]
    }
    image = np.zeros((512, 512), dtype=np.uint8)
    image[:64, :64] = 200
    cutout = extract_cutout(image, "a pen", RuleTableDetector(rules), RectangleSegmenter())
    assert cutout.image.shape == (64, 64)
    assert cutout.image.max() == 200


def test_cutout_or_full_falls_back(caplog):
    image = np.full((64, 64), 50, dtype=np.uint8)
    cutout, fell_back = cutout_or_full(image, "a pen", RuleTableDetector({}), RectangleSegmenter())
    assert fell_back
    assert cutout.image.shape == image.shape
    assert cutout.mask.all()


# ---------------------------------------------------------------------------
# mid-state composition


def oracle_compose(cutouts, entries, canvas=(512, 512), fill=0.5):
    """Per-pixel reference compositor with later-on-top z-order."""
    width, height = canvas
    board = np.full((height, width), fill)
    for cutout, e in zip(cutouts, entries):
        b = e.bbox
        content = bilinear_resize(to_float01(cutout.image), (b.h, b.w))
        mask = nearest_resize(cutout.mask.astype(np.uint8), (b.h, b.w)).astype(bool)
        for yy in range(b.h):
            for xx in range(b.w):
                if mask[yy, xx]:
                    board[b.y + yy, b.x + xx] = content[yy, xx]
    return board


def _cutout_from(backend, prompt, seed):
    image = backend.generate(prompt, seed=seed)
    return Cutout(image=image, mask=np.ones(image.shape, dtype=bool))


def test_compose_single_full_canvas_box():
    backend = ToyDiffusionBackend()
    cutout = _cutout_from(backend, "a pen", 1)
    entries = [entry(1, "a pen", (0, 0, 512, 512))]
    mid = compose_midstate([cutout], entries)
    expected = bilinear_resize(to_float01(cutout.image), (512, 512))
    assert np.array_equal(mid.canvas, expected)
    assert mid.placed_masks[0].all()


def test_compose_two_disjoint_boxes_matches_pixel_oracle():
    backend = ToyDiffusionBackend(canvas=(64, 64), latent_shape=(16, 16))
    cutouts = [_cutout_from(backend, "a pen", 1), _cutout_from(backend, "a mug", 2)]
    entries = [entry(1, "a pen", (0, 0, 24, 24)), entry(2, "a mug", (32, 32, 24, 24))]
    mid = compose_midstate(cutouts, entries, canvas=(64, 64))
    assert np.array_equal(mid.canvas, oracle_compose(cutouts, entries, canvas=(64, 64)))


def test_compose_overlap_later_entry_wins():
    backend = ToyDiffusionBackend(canvas=(64, 64), latent_shape=(16, 16))
    cutouts = [_cutout_from(backend, "a pen", 1), _cutout_from(backend, "a mug", 2)]
    entries = [entry(1, "a pen", (0, 0, 32, 32)), entry(2, "a mug", (16, 16, 32, 32))]
    mid = compose_midstate(cutouts, entries, canvas=(64, 64))
    oracle = oracle_compose(cutouts, entries, canvas=(64, 64))
    assert np.array_equal(mid.canvas, oracle)
    # overlap region comes from the later entry
    later = bilinear_resize(to_float01(cutouts[1].image), (32, 32))
    assert np.array_equal(mid.canvas[16:32, 16:32], later[:16, :16])


def test_compose_fill_outside_masks_and_mask_subset_of_bbox():
    backend = ToyDiffusionBackend(canvas=(64, 64), latent_shape=(16, 16))
    cutouts = [_cutout_from(backend, "a pen", 1)]
    entries = [entry(1, "a pen", (8, 8, 16, 16))]
    mid = compose_midstate(cutouts, entries, canvas=(64, 64), fill=0.5)
    outside = ~mid.placed_masks[0]
    assert (mid.canvas[outside] == 0.5).all()
    ys, xs = np.nonzero(mid.placed_masks[0])
    assert ys.min() >= 8 and ys.max() < 24 and xs.min() >= 8 and xs.max() < 24


def test_compose_misaligned_lists_rejected():
    with pytest.raises(ValueError):
        compose_midstate([], [entry(1, "a pen", (0, 0, 10, 10))])


# ---------------------------------------------------------------------------
# latent guidance


def test_latent_guidance_length_and_t0_identity():
    backend = ToyDiffusionBackend(steps=30)
    mid = MidStateImage(canvas=np.full((512, 512), 0.5))
    latents = extract_latent_guidance(mid, backend, steps=30, seed=5)
    assert len(latents) == 30
    assert np.array_equal(latents[0], backend.encode(mid.canvas))


def test_latent_guidance_reproducible_under_seed():
    backend = ToyDiffusionBackend(steps=10)
    mid = MidStateImage(canvas=np.random.default_rng(0).random((512, 512)))
    a = extract_latent_guidance(mid, backend, seed=9)
    b = extract_latent_guidance(mid, backend, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = extract_latent_guidance(mid, backend, seed=10)
    assert not np.array_equal(a[5], c[5])


def test_latent_guidance_step_mismatch_rejected():
    backend = ToyDiffusionBackend(steps=30)
    mid = MidStateImage(canvas=np.full((512, 512), 0.5))
    with pytest.raises(ValueError):
        extract_latent_guidance(mid, backend, steps=50)


# ---------------------------------------------------------------------------
# lineart


def test_lineart_constant_canvas_is_all_zero():
    mid = MidStateImage(canvas=np.full((64, 64), 0.5))
    assert extract_lineart(mid).sum() == 0


def test_lineart_rectangle_border_within_one_pixel():
    canvas = np.full((64, 64), 0.5)
    canvas[20:40, 10:30] = 1.0
    mid = MidStateImage(canvas=canvas)
    edges = extract_lineart(mid)
    ys, xs = np.nonzero(edges)
    # every edge pixel lies within 1 px of the rectangle border
    for y, x in zip(ys, xs):
        near_y = min(abs(y - 20), abs(y - 39))
        near_x = min(abs(x - 10), abs(x - 29))
        on_border_band = (
            (near_y <= 1 and 10 - 1 <= x <= 29 + 1)
            or (near_x <= 1 and 20 - 1 <= y <= 39 + 1)
        )
        assert on_border_band, (y, x)
    # all four sides produce some response
    assert edges[20, 15] or edges[19, 15] or edges[21, 15]
    assert edges[39, 15] or edges[38, 15] or edges[40, 15]


def test_lineart_invariant_to_brightness_shift():
    rng = np.random.default_rng(2)
    canvas = rng.random((64, 64))
    shifted = canvas + 10.0
    a = extract_lineart(MidStateImage(canvas=canvas))
    b = extract_lineart(MidStateImage(canvas=shifted))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# union masks


def test_union_single_mask_identity():
    mask = np.random.default_rng(0).random((16, 16)) > 0.5
    assert np.array_equal(union_masks([mask]), mask)


def test_union_idempotent():
    mask = np.random.default_rng(1).random((16, 16)) > 0.5
    assert np.array_equal(union_masks([mask, mask]), mask)


def test_union_disjoint_pixel_counts_add():
    a = np.zeros((32, 32), dtype=bool)
    b = np.zeros((32, 32), dtype=bool)
    a.ravel()[:100] = True
    b.ravel()[200:400] = True
    assert union_masks([a, b]).sum() == 300


def test_union_associative_commutative_on_random_masks():
    rng = np.random.default_rng(3)
    for _ in range(20):
        ms = [rng.random((8, 8)) > 0.6 for _ in range(3)]
        abc = union_masks([union_masks(ms[:2]), ms[2]])
        bca = union_masks([ms[1], union_masks([ms[2], ms[0]])])
        flat = union_masks(ms)
        assert np.array_equal(abc, flat)
        assert np.array_equal(bca, flat)


def test_union_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        union_masks([np.zeros((4, 4), dtype=bool), np.zeros((5, 5), dtype=bool)])


def test_build_guidance_bundle_shapes():
    backend = ToyDiffusionBackend(steps=10)
    cutout = _cutout_from(backend, "a pen", 1)
    mid = compose_midstate([cutout], [entry(1, "a pen", (100, 100, 200, 200))])
    bundle = build_guidance(mid, backend, steps=10, seed=2)
    assert len(bundle.latent_sequence) == 10
    assert bundle.lineart.shape == (512, 512)
    assert bundle.union_mask.shape == (512, 512)
    assert np.array_equal(bundle.union_mask, mid.placed_masks[0])
