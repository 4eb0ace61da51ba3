"""Metric harness: consistency scores, distribution distance, edit alignment.

Contextual consistency is scored against each character's own first
appearance: the earliest detected crop becomes the reference, later crops
are comparands (character-character similarity and a Frechet distance over
embedding features).  Semantic consistency is text-image similarity between
each turn's final image and its global prompt.  Editing dialogues
additionally get one pass/fail alignment check per edit type.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backends.base import Detector, Embedder
from .backends.vision import cosine
from .benchkit.types import BenchDialogue
from .promptbook import BoundingBox, PromptBook, build_global_prompt

AFID_EPS = 1e-6
SMALL_SAMPLE_FLOOR = 10

RELATION_WORDS = ("left", "right", "top", "down")

NUMBER_VALUES = {"two": 2, "three": 3, "four": 4, "five": 5}


class NoPairs(ValueError):
    """A similarity metric received an empty pair list."""


class LengthMismatch(ValueError):
    """Aligned lists have different lengths."""


class DegenerateSet(ValueError):
    """A feature set is too small for covariance estimation."""


class UnknownRelation(ValueError):
    pass


class UnknownCountWord(ValueError):
    pass


class MissingDetection(RuntimeError):
    """A character could not be found in the image it was expected in."""


# ---------------------------------------------------------------------------
# Similarity metrics


def accs(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]], embedder: Embedder
) -> float:
    """Mean crop-to-reference cosine similarity, scaled to percent."""
    if not pairs:
        raise NoPairs("accs needs at least one (crop, reference) pair")
    sims = [
        cosine(embedder.embed_image(crop), embedder.embed_image(reference))
        for crop, reference in pairs
    ]
    return float(np.mean(sims) * 100.0)


def atis(
    images: Sequence[np.ndarray], global_prompts: Sequence[str], embedder: Embedder
) -> float:
    """Mean text-image cosine similarity, scaled to percent."""
    if len(images) != len(global_prompts):
        raise LengthMismatch(
            f"{len(images)} images vs {len(global_prompts)} prompts"
        )
    if not images:
        raise NoPairs("atis needs at least one (image, prompt) pair")
    sims = [
        cosine(embedder.embed_image(image), embedder.embed_text(prompt))
        for image, prompt in zip(images, global_prompts)
    ]
    return float(np.mean(sims) * 100.0)


def _covariance(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return mean, cov


def _floor_eigenvalues(cov: np.ndarray, eps: float) -> np.ndarray:
    """Regularize by flooring eigenvalues at eps.

    A uniform +eps*I shift would bias well-conditioned distances by O(eps);
    flooring only lifts the degenerate directions, so exact closed-form
    cases stay exact.
    """
    w, v = np.linalg.eigh(cov)
    w = np.maximum(w, eps)
    return (v * w) @ v.T


def _sqrt_product_trace(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """Tr((A B)^{1/2}) through the symmetric form A^{1/2} B A^{1/2}."""
    wa, va = np.linalg.eigh(cov_a)
    wa = np.clip(wa, 0.0, None)
    a_half = (va * np.sqrt(wa)) @ va.T
    inner = a_half @ cov_b @ a_half
    w = np.linalg.eigvalsh(inner)
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def afid(
    features_a: Sequence[np.ndarray],
    features_b: Sequence[np.ndarray],
    eps: float = AFID_EPS,
) -> float:
    """Frechet distance between two feature sets under Gaussian fits.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}) with sample
    covariances (ddof=1) regularized by an eps eigenvalue floor.
    """
    a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DegenerateSet("each feature set needs at least 2 vectors")
    if a.shape[1] != b.shape[1]:
        raise LengthMismatch(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    mean_a, cov_a = _covariance(a)
    mean_b, cov_b = _covariance(b)
    cov_a = _floor_eigenvalues(cov_a, eps)
    cov_b = _floor_eigenvalues(cov_b, eps)
    delta = mean_a - mean_b
    trace_term = (
        float(np.trace(cov_a) + np.trace(cov_b))
        - 2.0 * _sqrt_product_trace(cov_a, cov_b)
    )
    return float(delta @ delta + trace_term)


# ---------------------------------------------------------------------------
# Alignment checks


def check_spatial(box_a: BoundingBox, box_b: BoundingBox, relation: str) -> bool:
    """Compare box centers: 'a left of b' passes iff a's center is left of b's."""
    if relation not in RELATION_WORDS:
        raise UnknownRelation(f"relation must be one of {RELATION_WORDS}")
    (ax, ay), (bx, by) = box_a.center, box_b.center
    if relation == "left":
        return ax < bx
    if relation == "right":
        return ax > bx
    if relation == "top":
        return ay < by
    return ay > by


def check_attribute(
    crop: np.ndarray, old_prompt: str, new_prompt: str, embedder: Embedder
) -> bool:
    """Pass iff the crop sits strictly closer to the new prompt than the old."""
    crop_vec = embedder.embed_image(crop)
    sim_new = cosine(crop_vec, embedder.embed_text(new_prompt))
    sim_old = cosine(crop_vec, embedder.embed_text(old_prompt))
    return sim_new > sim_old


def check_negative(
    image: np.ndarray, negative_prompt: str, detector: Detector
) -> bool:
    """Pass iff the removed object is not detected at or above threshold."""
    if not negative_prompt.strip():
        raise ValueError("negative prompt must be non-empty")
    detections = detector.detect(image, negative_prompt)
    return all(d.confidence < detector.box_threshold for d in detections)


def check_numeracy(detections: int, expected: str) -> bool:
    """Pass iff the detection count equals the expected count word exactly."""
    if expected not in NUMBER_VALUES:
        raise UnknownCountWord(f"count word must be one of {sorted(NUMBER_VALUES)}")
    return detections == NUMBER_VALUES[expected]


# ---------------------------------------------------------------------------
# Reference collection


@dataclass
class CharacterTrack:
    """One character's detected crops across a dialogue."""

    char_id: int
    reference_turn: int
    reference: np.ndarray
    comparands: list[tuple[int, np.ndarray]] = field(default_factory=list)


def collect_references(
    turn_images: Sequence[np.ndarray],
    dialogue: BenchDialogue,
    detector: Detector,
) -> tuple[dict[int, CharacterTrack], list[dict]]:
    """Crop every character from every turn it appears in.

    The earliest detected crop per id becomes the reference; misses are
    recorded (id, turn) and scored absent rather than raised.
    """
    if len(turn_images) != len(dialogue.turns):
        raise LengthMismatch(
            f"{len(turn_images)} images for {len(dialogue.turns)} turns"
        )
    tracks: dict[int, CharacterTrack] = {}
    misses: list[dict] = []
    for turn_no, (image, turn) in enumerate(
        zip(turn_images, dialogue.turns), start=1
    ):
        seen: set[int] = set()
        for entry in turn.book.characters:
            if entry.id in seen:
                continue  # numeracy duplicates share one track
            seen.add(entry.id)
            detections = detector.detect(image, entry.prompt)
            if not detections:
                misses.append({"turn": turn_no, "id": entry.id, "prompt": entry.prompt})
                continue
            box = detections[0].box
            height, width = np.asarray(image).shape
            x1, y1 = max(0, box.x), max(0, box.y)
            x2, y2 = min(width, box.x2), min(height, box.y2)
            if x2 <= x1 or y2 <= y1:
                misses.append({"turn": turn_no, "id": entry.id, "prompt": entry.prompt})
                continue
            crop = np.asarray(image)[y1:y2, x1:x2]
            if entry.id not in tracks:
                tracks[entry.id] = CharacterTrack(
                    char_id=entry.id, reference_turn=turn_no, reference=crop
                )
            else:
                tracks[entry.id].comparands.append((turn_no, crop))
    return tracks, misses


# ---------------------------------------------------------------------------
# Alignment harness for editing dialogues

_RELATION_RE = re.compile(r"\b(?:to the )?(left|right|top|down) of\b")
_COUNT_RE = re.compile(r"\b(two|three|four|five)\b")


def _parse_spatial_caption(
    caption: str, book: PromptBook
) -> Optional[tuple[int, int, str]]:
    """Find (subject id, object id, relation) in a spatial-edit caption."""
    match = _RELATION_RE.search(caption)
    if not match:
        return None
    relation = match.group(1)
    before, after = caption[: match.start()], caption[match.end():]
    subject_id = object_id = None
    for entry in book.characters:
        noun = entry.noun
        if noun and re.search(rf"\b{re.escape(noun)}\b", before):
            subject_id = entry.id
        if noun and re.search(rf"\b{re.escape(noun)}\b", after):
            object_id = entry.id
    if subject_id is None or object_id is None or subject_id == object_id:
        return None
    return subject_id, object_id, relation


def _best_box(image: np.ndarray, prompt: str, detector: Detector) -> BoundingBox:
    detections = detector.detect(image, prompt)
    if not detections:
        raise MissingDetection(prompt)
    return detections[0].box


@dataclass
class AlignmentResult:
    spatial: Optional[bool] = None
    attribute: Optional[bool] = None
    negative: Optional[bool] = None
    numeracy: Optional[bool] = None

    def as_dict(self) -> dict:
        return {
            "spatial": self.spatial,
            "attribute": self.attribute,
            "negative": self.negative,
            "numeracy": self.numeracy,
        }


def check_alignment(
    turn_images: Sequence[np.ndarray],
    dialogue: BenchDialogue,
    detector: Detector,
    embedder: Embedder,
) -> AlignmentResult:
    """Run the four per-type checks on an editing dialogue's images.

    A check that cannot run (unparseable caption, missing detection where
    presence was required) scores a fail rather than raising.
    """
    result = AlignmentResult()
    if len(dialogue.turns) < 4 or len(turn_images) < 4:
        return result

    # Turn 1: spatial relation between two detected objects.
    turn1 = dialogue.turns[0]
    parsed = _parse_spatial_caption(turn1.caption, turn1.book)
    if parsed is not None:
        subject_id, object_id, relation = parsed
        prompt_of = {c.id: c.prompt for c in turn1.book.characters}
        try:
            box_a = _best_box(turn_images[0], prompt_of[subject_id], detector)
            box_b = _best_box(turn_images[0], prompt_of[object_id], detector)
            result.spatial = check_spatial(box_a, box_b, relation)
        except MissingDetection:
            result.spatial = False

    # Turn 2: attribute edit moves the crop toward the new prompt.
    books1, books2 = dialogue.turns[0].book, dialogue.turns[1].book
    prompts1 = {c.id: c.prompt for c in books1.characters}
    changed = [
        c
        for c in books2.characters
        if c.id in prompts1 and c.prompt != prompts1[c.id]
    ]
    if changed:
        edited = changed[0]
        try:
            box = _best_box(turn_images[1], edited.prompt, detector)
            image = np.asarray(turn_images[1])
            crop = image[
                max(0, box.y): min(image.shape[0], box.y2),
                max(0, box.x): min(image.shape[1], box.x2),
            ]
            result.attribute = check_attribute(
                crop, prompts1[edited.id], edited.prompt, embedder
            )
        except MissingDetection:
            result.attribute = False

    # Turn 3: the negated object must not be detectable.
    book3 = dialogue.turns[2].book
    if book3.negative_prompt.strip():
        result.negative = check_negative(
            turn_images[2], book3.negative_prompt, detector
        )

    # Turn 4: detection count matches the caption's count word.
    turn4 = dialogue.turns[3]
    count_match = _COUNT_RE.search(turn4.caption)
    ids4 = [c.id for c in turn4.book.characters]
    duplicated = [i for i in set(ids4) if ids4.count(i) >= 2]
    if count_match and duplicated:
        prompt = next(c.prompt for c in turn4.book.characters if c.id == duplicated[0])
        detections = detector.detect(turn_images[3], prompt)
        hits = sum(1 for d in detections if d.confidence >= detector.box_threshold)
        result.numeracy = check_numeracy(hits, count_match.group(1))
    return result


# ---------------------------------------------------------------------------
# Dialogue and corpus evaluation


@dataclass
class DialogueScore:
    dialogue_id: str
    accs: Optional[float] = None
    atis: Optional[float] = None
    afid: Optional[float] = None
    afid_small_sample: bool = False
    alignment: Optional[AlignmentResult] = None
    detection_misses: int = 0

    def as_dict(self) -> dict:
        return {
            "dialogue": self.dialogue_id,
            "accs": self.accs,
            "atis": self.atis,
            "afid": self.afid,
            "afid_small_sample": self.afid_small_sample,
            "alignment": self.alignment.as_dict() if self.alignment else None,
            "detection_misses": self.detection_misses,
        }


def _score_dialogue(
    dialogue_id: str,
    dialogue: BenchDialogue,
    turn_images: Sequence[np.ndarray],
    detector: Detector,
    embedder: Embedder,
    task: Optional[str] = None,
) -> tuple[DialogueScore, list[np.ndarray], list[np.ndarray]]:
    score = DialogueScore(dialogue_id=dialogue_id)
    tracks, misses = collect_references(turn_images, dialogue, detector)
    score.detection_misses = len(misses)

    pairs = [
        (crop, track.reference)
        for track in tracks.values()
        for _, crop in track.comparands
    ]
    if pairs:
        score.accs = accs(pairs, embedder)

    prompts = [build_global_prompt(t.book) for t in dialogue.turns]
    score.atis = atis(list(turn_images), prompts, embedder)

    refs = [embedder.embed_image(t.reference) for t in tracks.values()]
    comps = [
        embedder.embed_image(crop)
        for t in tracks.values()
        for _, crop in t.comparands
    ]
    if len(refs) >= 2 and len(comps) >= 2:
        score.afid = afid(refs, comps)
        score.afid_small_sample = (
            len(refs) < SMALL_SAMPLE_FLOOR or len(comps) < SMALL_SAMPLE_FLOOR
        )

    from .benchkit.corrections import _infer_task

    resolved = task or _infer_task(dialogue)
    if resolved == "editing":
        score.alignment = check_alignment(turn_images, dialogue, detector, embedder)
    return score, refs, comps


def evaluate_dialogue(
    dialogue_id: str,
    dialogue: BenchDialogue,
    turn_images: Sequence[np.ndarray],
    detector: Detector,
    embedder: Embedder,
    task: Optional[str] = None,
) -> DialogueScore:
    score, _, _ = _score_dialogue(
        dialogue_id, dialogue, turn_images, detector, embedder, task
    )
    return score


@dataclass
class EvalReport:
    per_dialogue: list[DialogueScore] = field(default_factory=list)
    corpus_afid: Optional[float] = None
    corpus_afid_small_sample: bool = False

    def aggregates(self) -> dict:
        def mean_of(values: list[float]) -> Optional[float]:
            return float(np.mean(values)) if values else None

        accs_values = [s.accs for s in self.per_dialogue if s.accs is not None]
        atis_values = [s.atis for s in self.per_dialogue if s.atis is not None]
        afid_values = [s.afid for s in self.per_dialogue if s.afid is not None]
        alignment_rates: dict[str, Optional[float]] = {}
        for kind in ("spatial", "attribute", "negative", "numeracy"):
            outcomes = [
                getattr(s.alignment, kind)
                for s in self.per_dialogue
                if s.alignment is not None and getattr(s.alignment, kind) is not None
            ]
            alignment_rates[kind] = (
                float(np.mean([100.0 if o else 0.0 for o in outcomes]))
                if outcomes
                else None
            )
        return {
            "accs": mean_of(accs_values),
            "atis": mean_of(atis_values),
            "afid": mean_of(afid_values),
            "afid_corpus_pooled": self.corpus_afid,
            "alignment_accuracy": alignment_rates,
            "detection_misses": int(
                sum(s.detection_misses for s in self.per_dialogue)
            ),
            "dialogues": len(self.per_dialogue),
        }

    def as_dict(self) -> dict:
        return {
            "per_dialogue": [s.as_dict() for s in self.per_dialogue],
            "aggregates": self.aggregates(),
            "afid_corpus_small_sample": self.corpus_afid_small_sample,
        }


def evaluate_corpus(
    corpus: dict[str, BenchDialogue],
    images_by_dialogue: dict[str, Sequence[np.ndarray]],
    detector: Detector,
    embedder: Embedder,
    task: Optional[str] = None,
) -> EvalReport:
    """Evaluate every dialogue with images; aggregates reduce in sorted order."""
    report = EvalReport()
    all_refs: list[np.ndarray] = []
    all_comps: list[np.ndarray] = []
    for dialogue_id in sorted(corpus, key=lambda k: (len(k), k)):
        if dialogue_id not in images_by_dialogue:
            continue
        images = images_by_dialogue[dialogue_id]
        dialogue = corpus[dialogue_id]
        score, refs, comps = _score_dialogue(
            dialogue_id, dialogue, images, detector, embedder, task
        )
        report.per_dialogue.append(score)
        all_refs.extend(refs)
        all_comps.extend(comps)
    if len(all_refs) >= 2 and len(all_comps) >= 2:
        report.corpus_afid = afid(all_refs, all_comps)
        report.corpus_afid_small_sample = (
            len(all_refs) < SMALL_SAMPLE_FLOOR or len(all_comps) < SMALL_SAMPLE_FLOOR
        )
    return report
