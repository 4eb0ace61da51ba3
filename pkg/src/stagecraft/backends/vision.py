"""Mock open-vocabulary detection, segmentation, and embedding.

The pattern detector runs normalized cross-correlation between the image
and the prompt's procedural pattern over a lattice of window sizes,
followed by greedy local refinement and non-maximum suppression.  Because
toy images are built from the same pattern family, a planted character is
recovered with near-1 confidence while unrelated content stays far below
the detection threshold.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.fft import irfft2, next_fast_len, rfft2

from ..imaging import bilinear_resize, block_reduce_mean, to_float01
from ..promptbook import BoundingBox
from .base import Detection, DimensionMismatch
from .toy import prompt_target

DEFAULT_BOX_THRESHOLD = 0.5
DEFAULT_TEXT_THRESHOLD = 0.25

# Window-side lattice at detection resolution: geometric-ish steps so any
# box is within ~6% of some candidate size.
_SIZE_LATTICE = (14, 16, 18, 20, 23, 26, 29, 33, 37, 42, 47, 53, 59, 64)

# Skip extreme window shapes; real layouts are never 6:1 slivers.
_MAX_ASPECT = 3.0

_EMBED_GRID = (16, 16)

_TEMPLATE_FFT_CACHE_SIZE = 512


class _WindowStats:
    """Per-call integral images giving every window's sum and sum of squares."""

    def __init__(self, grid: np.ndarray):
        gh, gw = grid.shape
        self.shape = (gh, gw)
        self.s = np.zeros((gh + 1, gw + 1))
        self.s[1:, 1:] = grid.cumsum(axis=0).cumsum(axis=1)
        self.ss = np.zeros((gh + 1, gw + 1))
        self.ss[1:, 1:] = (grid ** 2).cumsum(axis=0).cumsum(axis=1)

    def window_norms(self, h: int, w: int) -> np.ndarray:
        """sqrt of centered sum-of-squares for all (h, w) windows."""
        def sums(table):
            return (
                table[h:, w:] - table[:-h, w:] - table[h:, :-w] + table[:-h, :-w]
            )
        win_sum = sums(self.s)
        win_sumsq = sums(self.ss)
        return np.sqrt(np.maximum(win_sumsq - win_sum ** 2 / (h * w), 0.0))


def _window_ncc(image: np.ndarray, box: tuple[int, int, int, int], template_fn) -> float:
    x, y, w, h = box
    H, W = image.shape
    if w < 12 or h < 12 or x < 0 or y < 0 or x + w > W or y + h > H:
        return -1.0
    window = image[y: y + h, x: x + w]
    template = template_fn((h, w))
    wc = window - window.mean()
    tc = template - template.mean()
    denom = np.sqrt((wc ** 2).sum() * (tc ** 2).sum())
    if denom < 1e-12:
        return 0.0
    return float(np.clip((wc * tc).sum() / denom, -1.0, 1.0))


def _iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union else 0.0


class PatternDetector:
    """Correlation-based stand-in for an open-vocabulary detector.

    detect() downsamples the image to the detection grid, scans the size
    lattice with FFT-based NCC, refines surviving candidates by greedy hill
    climbing over position and size, then suppresses overlapping boxes.
    Confidence is the refined correlation.
    """

    def __init__(
        self,
        box_threshold: float = DEFAULT_BOX_THRESHOLD,
        text_threshold: float = DEFAULT_TEXT_THRESHOLD,
        detection_shape: tuple[int, int] = (64, 64),
        pattern_seed: int = 0,
        nms_iou: float = 0.4,
        max_detections: int = 16,
    ):
        self.box_threshold = box_threshold
        self.text_threshold = text_threshold
        self.detection_shape = detection_shape
        self.pattern_seed = pattern_seed
        self.nms_iou = nms_iou
        self.max_detections = max_detections
        self._template_cache: OrderedDict[tuple, np.ndarray] = OrderedDict()
        self._fft_cache: OrderedDict[tuple, tuple[np.ndarray, float]] = OrderedDict()
        gh, gw = detection_shape
        self._fft_shape = (next_fast_len(2 * gh), next_fast_len(2 * gw))

    def _cache_get(self, cache: OrderedDict, key, build):
        if key in cache:
            cache.move_to_end(key)
            return cache[key]
        value = build()
        cache[key] = value
        if len(cache) > _TEMPLATE_FFT_CACHE_SIZE:
            cache.popitem(last=False)
        return value

    def _template(self, text: str, shape: tuple[int, int]) -> np.ndarray:
        key = (text, shape[0], shape[1])
        return self._cache_get(
            cache=self._template_cache,
            key=key,
            build=lambda: prompt_target(text, shape, self.pattern_seed),
        )

    def _template_fft(self, text: str, shape: tuple[int, int]):
        key = (text, shape[0], shape[1])

        def build():
            template = self._template(text, shape)
            centered = template - template.mean()
            norm = float(np.sqrt((centered ** 2).sum()))
            return rfft2(centered[::-1, ::-1], s=self._fft_shape), norm

        return self._cache_get(self._fft_cache, key, build)

    def _to_grid(self, image: np.ndarray) -> tuple[np.ndarray, float, float]:
        raster = to_float01(image)
        in_h, in_w = raster.shape
        gh, gw = self.detection_shape
        grid = raster if (in_h, in_w) == (gh, gw) else block_reduce_mean(raster, (gh, gw))
        return grid, in_h / gh, in_w / gw

    def _refine(
        self, image: np.ndarray, box: tuple[int, int, int, int], text: str
    ) -> tuple[tuple[int, int, int, int], float]:
        template_fn = lambda shape: self._template(text, shape)
        best = box
        best_score = _window_ncc(image, box, template_fn)
        for _ in range(8):
            improved = False
            x, y, w, h = best
            for cand in (
                (x - 1, y, w, h), (x + 1, y, w, h), (x, y - 1, w, h), (x, y + 1, w, h),
                (x, y, w - 1, h), (x, y, w + 1, h), (x, y, w, h - 1), (x, y, w, h + 1),
                (x - 1, y, w + 2, h), (x, y - 1, w, h + 2),
                (x + 1, y, w - 2, h), (x, y + 1, w, h - 2),
            ):
                score = _window_ncc(image, cand, template_fn)
                if score > best_score + 1e-6:
                    best, best_score = cand, score
                    improved = True
            if not improved:
                break
        return best, best_score

    def detect(self, image: np.ndarray, text: str) -> list[Detection]:
        grid, sy, sx = self._to_grid(image)
        gh, gw = grid.shape
        stats = _WindowStats(grid)
        image_fft = rfft2(grid, s=self._fft_shape)
        candidates: list[tuple[float, tuple[int, int, int, int]]] = []
        for h in _SIZE_LATTICE:
            if h > gh:
                continue
            for w in _SIZE_LATTICE:
                if w > gw or max(h, w) > _MAX_ASPECT * min(h, w):
                    continue
                template_fft, t_norm = self._template_fft(text, (h, w))
                if t_norm < 1e-12:
                    continue
                full = irfft2(image_fft * template_fft, s=self._fft_shape)
                cross = full[h - 1: gh, w - 1: gw]
                win_norm = stats.window_norms(h, w)
                with np.errstate(divide="ignore", invalid="ignore"):
                    ncc = np.where(
                        win_norm > 1e-9, cross / (win_norm * t_norm), 0.0
                    )
                ncc = np.clip(ncc, -1.0, 1.0)
                # Seed gate: keep coarse hits strong enough to be worth
                # refining; the box threshold applies after refinement.
                ys, xs = np.nonzero(ncc >= self.text_threshold)
                if ys.size > 64:
                    order = np.argsort(ncc[ys, xs])[::-1][:64]
                    ys, xs = ys[order], xs[order]
                for y, x in zip(ys.tolist(), xs.tolist()):
                    candidates.append((float(ncc[y, x]), (x, y, w, h)))
        if not candidates:
            return []
        candidates.sort(key=lambda c: (-c[0], c[1]))
        kept: list[tuple[float, tuple[int, int, int, int]]] = []
        for score, box in candidates:
            if any(_iou(box, kbox) > self.nms_iou for _, kbox in kept):
                continue
            kept.append((score, box))
            if len(kept) >= self.max_detections * 2:
                break
        refined_hits: list[tuple[float, tuple[int, int, int, int]]] = []
        for _, box in kept:
            refined, score = self._refine(grid, box, text)
            if score >= self.box_threshold:
                refined_hits.append((score, refined))
        # Re-suppress after refinement in case boxes converged together.
        refined_hits.sort(key=lambda d: (-d[0], d[1]))
        final: list[Detection] = []
        final_grid_boxes: list[tuple[int, int, int, int]] = []
        for score, box in refined_hits:
            if any(_iou(box, prior) > self.nms_iou for prior in final_grid_boxes):
                continue
            final_grid_boxes.append(box)
            x, y, w, h = box
            final.append(
                Detection(
                    box=BoundingBox(
                        int(round(x * sx)),
                        int(round(y * sy)),
                        max(1, int(round(w * sx))),
                        max(1, int(round(h * sy))),
                    ),
                    confidence=float(score),
                )
            )
            if len(final) >= self.max_detections:
                break
        return final


class RuleTableDetector:
    """Detector returning scripted boxes verbatim; for tests and fixtures.

    Rules map a text prompt to a list of (box, confidence) pairs; the
    fallback key "*" applies to any prompt without its own rule.
    """

    def __init__(
        self,
        rules: dict[str, list[tuple[BoundingBox, float]]],
        box_threshold: float = DEFAULT_BOX_THRESHOLD,
    ):
        self.rules = rules
        self.box_threshold = box_threshold

    def detect(self, image: np.ndarray, text: str) -> list[Detection]:
        hits = self.rules.get(text, self.rules.get("*", []))
        detections = [Detection(box=b, confidence=c) for b, c in hits]
        return sorted(detections, key=lambda d: -d.confidence)


class RectangleSegmenter:
    """Segmentation stand-in: the whole detected box is foreground."""

    def segment(self, image: np.ndarray, box: BoundingBox) -> np.ndarray:
        return np.ones((box.h, box.w), dtype=bool)


class PatternEmbedder:
    """Feature extractor aligned with the toy pattern family.

    Image features are the centered, unit-normalized bilinear reduction to a
    16 x 16 grid; text features embed the prompt's own pattern sampled at
    the same grid, so an image generated from a prompt scores near 1
    against that prompt and near 0 against unrelated ones.
    """

    def __init__(self, pattern_seed: int = 0):
        self.pattern_seed = pattern_seed
        self.dims = _EMBED_GRID[0] * _EMBED_GRID[1]

    def _normalize(self, raster: np.ndarray) -> np.ndarray:
        flat = raster.astype(np.float64).ravel()
        flat = flat - flat.mean()
        norm = np.linalg.norm(flat)
        if norm < 1e-12:
            basis = np.zeros(self.dims)
            basis[0] = 1.0
            return basis
        return flat / norm

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        raster = to_float01(image)
        if raster.shape != _EMBED_GRID:
            raster = bilinear_resize(raster, _EMBED_GRID)
        return self._normalize(raster)

    def embed_text(self, text: str) -> np.ndarray:
        return self._normalize(prompt_target(text, _EMBED_GRID, self.pattern_seed))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != v.shape:
        raise DimensionMismatch(f"embedding shapes differ: {u.shape} vs {v.shape}")
    return float(np.dot(u, v))
