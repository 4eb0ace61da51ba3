"""Character image manager: reference lifecycle, cutouts, mid-state, guidance.

Every character id gets exactly one reference image per session, generated
on first appearance and never overwritten; later turns regenerate the
character's on-stage image from the current prompt with the reference
injected through the backend's adapter conditioning.  On-stage images are
cut out, resized into their layout boxes on a blank canvas (the mid-state
image), and the mid-state yields the latent sequence, the lineart map, and
the union mask that steer the final render.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backends.base import (
    Conditioning,
    Detector,
    DiffusionBackend,
    DimensionMismatch,
    Segmenter,
)
from .imaging import (
    bilinear_resize,
    decode_png,
    encode_png,
    nearest_resize,
    to_float01,
    to_uint8,
)
from .promptbook import CharacterEntry

logger = logging.getLogger(__name__)

MIDSTATE_FILL = 0.5

# Edge threshold as a fraction of the canvas dynamic range.
LINEART_THRESHOLD = 0.10


class StoreError(RuntimeError):
    """Reference persistence failed or an invariant was violated."""


class NoDetection(RuntimeError):
    """The detector found nothing above its box threshold."""


@dataclass
class Cutout:
    """A character crop and its aligned foreground mask."""

    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DimensionMismatch(
                f"cutout image {self.image.shape} vs mask {self.mask.shape}"
            )
        if not bool(self.mask.any()):
            raise ValueError("cutout mask needs at least one foreground pixel")


@dataclass
class MidStateImage:
    """Blank-background canvas with every cutout placed at its box."""

    canvas: np.ndarray
    placed_masks: dict[int, np.ndarray] = field(default_factory=dict)

    def union_mask(self) -> np.ndarray:
        if not self.placed_masks:
            return np.zeros(self.canvas.shape, dtype=bool)
        return union_masks([self.placed_masks[k] for k in sorted(self.placed_masks)])


@dataclass
class GuidanceBundle:
    """Everything the guided generator consumes for one turn."""

    latent_sequence: list[np.ndarray]
    lineart: np.ndarray
    union_mask: np.ndarray
    per_char_masks: dict[int, np.ndarray]


class ReferenceStore:
    """Write-once map from (session, character id) to a reference image.

    Images persist as PNG files under ``<root>/<session>/<char_id>.png``
    next to an ``index.json`` naming them.  In-memory cache keeps replay
    deterministic and cheap.
    """

    def __init__(self, root: Optional[str | Path] = None):
        self.root = Path(root) if root is not None else None
        self._cache: dict[tuple[str, int], bytes] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._load_existing()

    def _load_existing(self) -> None:
        assert self.root is not None
        for index_path in self.root.glob("*/index.json"):
            session_id = index_path.parent.name
            try:
                index = json.loads(index_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise StoreError(f"corrupt reference index {index_path}: {exc}") from exc
            for char_id, filename in index.items():
                data = (index_path.parent / filename).read_bytes()
                self._cache[(session_id, int(char_id))] = data

    def has(self, session_id: str, char_id: int) -> bool:
        return (session_id, char_id) in self._cache

    def get(self, session_id: str, char_id: int) -> np.ndarray:
        try:
            return decode_png(self._cache[(session_id, char_id)])
        except KeyError as exc:
            raise StoreError(f"no reference for {session_id}/{char_id}") from exc

    def get_bytes(self, session_id: str, char_id: int) -> bytes:
        try:
            return self._cache[(session_id, char_id)]
        except KeyError as exc:
            raise StoreError(f"no reference for {session_id}/{char_id}") from exc

    def put(self, session_id: str, char_id: int, image: np.ndarray) -> None:
        key = (session_id, char_id)
        if key in self._cache:
            raise StoreError(
                f"reference {session_id}/{char_id} already exists (write-once)"
            )
        data = encode_png(image)
        self._cache[key] = data
        if self.root is not None:
            session_dir = self.root / session_id
            try:
                session_dir.mkdir(parents=True, exist_ok=True)
                (session_dir / f"{char_id}.png").write_bytes(data)
                index_path = session_dir / "index.json"
                index = {}
                if index_path.exists():
                    index = json.loads(index_path.read_text(encoding="utf-8"))
                index[str(char_id)] = f"{char_id}.png"
                index_path.write_text(
                    json.dumps(index, indent=2, sort_keys=True), encoding="utf-8"
                )
            except OSError as exc:
                raise StoreError(f"persisting reference failed: {exc}") from exc

    def ids_for(self, session_id: str) -> set[int]:
        return {cid for (sid, cid) in self._cache if sid == session_id}


def get_or_create_reference(
    session_id: str,
    entry: CharacterEntry,
    backend: DiffusionBackend,
    store: ReferenceStore,
    seed: int = 0,
) -> np.ndarray:
    """Return the character's frozen reference, generating it on first sight."""
    if store.has(session_id, entry.id):
        return store.get(session_id, entry.id)
    image = backend.generate(prompt=entry.prompt, seed=seed)
    store.put(session_id, entry.id, image)
    return image


def generate_onstage(
    entry: CharacterEntry,
    reference: Optional[np.ndarray],
    backend: DiffusionBackend,
    seed: int = 0,
) -> np.ndarray:
    """Current-turn character image, reference-conditioned when available."""
    conditioning = Conditioning(
        global_prompt=entry.prompt, adapter_reference=reference
    )
    return backend.generate(conditioning=conditioning, seed=seed)


def extract_cutout(
    image: np.ndarray,
    prompt: str,
    detector: Detector,
    segmenter: Segmenter,
) -> Cutout:
    """Crop the best detection of ``prompt`` and mask its background.

    Raises :class:`NoDetection` when nothing clears the detector's box
    threshold; callers that must keep a session alive fall back to
    :func:`full_image_cutout`.
    """
    detections = detector.detect(image, prompt)
    if not detections:
        raise NoDetection(f"nothing detected for {prompt!r}")
    best = detections[0].box
    height, width = np.asarray(image).shape
    x1, y1 = max(0, best.x), max(0, best.y)
    x2, y2 = min(width, best.x2), min(height, best.y2)
    if x2 <= x1 or y2 <= y1:
        raise NoDetection(f"detection for {prompt!r} lies outside the image")
    crop = np.asarray(image)[y1:y2, x1:x2]
    mask = np.asarray(
        segmenter.segment(image, type(best)(x1, y1, x2 - x1, y2 - y1)), dtype=bool
    )
    if mask.shape != crop.shape:
        mask = nearest_resize(mask.astype(np.uint8), crop.shape).astype(bool)
    return Cutout(image=crop, mask=mask)


def full_image_cutout(image: np.ndarray) -> Cutout:
    return Cutout(
        image=np.asarray(image), mask=np.ones(np.asarray(image).shape, dtype=bool)
    )


def cutout_or_full(
    image: np.ndarray, prompt: str, detector: Detector, segmenter: Segmenter
) -> tuple[Cutout, bool]:
    """extract_cutout with the logged full-image fallback; returns (cutout, fell_back)."""
    try:
        return extract_cutout(image, prompt, detector, segmenter), False
    except NoDetection:
        logger.warning("no detection for %r; using full-image cutout", prompt)
        return full_image_cutout(image), True


def compose_midstate(
    cutouts: Sequence[Cutout],
    entries: Sequence[CharacterEntry],
    canvas: tuple[int, int] = (512, 512),
    fill: float = MIDSTATE_FILL,
) -> MidStateImage:
    """Resize each cutout into its entry's box on a blank canvas.

    Stretch-to-fit, list order resolves overlaps (later entries on top),
    and masked-out cutout pixels never overwrite what is already placed.
    """
    if len(cutouts) != len(entries):
        raise ValueError(
            f"{len(cutouts)} cutouts for {len(entries)} entries; must align 1:1"
        )
    width, height = canvas
    board = np.full((height, width), float(fill))
    placed: dict[int, np.ndarray] = {}
    for idx, (cutout, entry) in enumerate(zip(cutouts, entries)):
        box = entry.bbox
        if box.x < 0 or box.y < 0 or box.x2 > width or box.y2 > height:
            raise ValueError(f"entry {idx} box {box.as_list()} exceeds canvas {canvas}")
        content = bilinear_resize(to_float01(cutout.image), (box.h, box.w))
        mask = nearest_resize(cutout.mask.astype(np.uint8), (box.h, box.w)).astype(bool)
        region = board[box.y: box.y2, box.x: box.x2]
        region[mask] = content[mask]
        full_mask = np.zeros((height, width), dtype=bool)
        full_mask[box.y: box.y2, box.x: box.x2] = mask
        placed[idx] = full_mask
    return MidStateImage(canvas=board, placed_masks=placed)


def extract_latent_guidance(
    mid: MidStateImage,
    backend: DiffusionBackend,
    steps: Optional[int] = None,
    seed: int = 0,
) -> list[np.ndarray]:
    """Forward-diffuse the encoded mid-state once per step: g_t for t in [0, T)."""
    total = steps if steps is not None else backend.schedule.steps
    if total != backend.schedule.steps:
        raise ValueError(
            f"requested {total} guidance steps but the backend schedule has "
            f"{backend.schedule.steps}"
        )
    x0 = backend.encode(mid.canvas)
    return [backend.forward_diffuse(x0, t, seed=seed) for t in range(total)]


def extract_lineart(mid: MidStateImage) -> np.ndarray:
    """Binary edge map from central-difference gradient magnitude.

    The threshold scales with the canvas dynamic range, so a constant
    canvas yields an all-zero map and brightness shifts change nothing.
    """
    canvas = np.asarray(mid.canvas, dtype=np.float64)
    gy = np.zeros_like(canvas)
    gx = np.zeros_like(canvas)
    gy[1:-1, :] = (canvas[2:, :] - canvas[:-2, :]) / 2.0
    gx[:, 1:-1] = (canvas[:, 2:] - canvas[:, :-2]) / 2.0
    magnitude = np.hypot(gx, gy)
    dynamic_range = float(canvas.max() - canvas.min())
    return (magnitude > LINEART_THRESHOLD * dynamic_range).astype(np.float64)


def union_masks(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Pixelwise OR; all masks must share one shape."""
    if not masks:
        raise ValueError("union_masks needs at least one mask")
    first = np.asarray(masks[0], dtype=bool)
    result = first.copy()
    for mask in masks[1:]:
        arr = np.asarray(mask, dtype=bool)
        if arr.shape != first.shape:
            raise DimensionMismatch(
                f"mask shape {arr.shape} does not match {first.shape}"
            )
        result |= arr
    return result


def build_guidance(
    mid: MidStateImage,
    backend: DiffusionBackend,
    steps: Optional[int] = None,
    seed: int = 0,
) -> GuidanceBundle:
    """Bundle latents, lineart, and masks for the guided generator."""
    return GuidanceBundle(
        latent_sequence=extract_latent_guidance(mid, backend, steps, seed),
        lineart=extract_lineart(mid),
        union_mask=mid.union_mask(),
        per_char_masks=dict(mid.placed_masks),
    )
