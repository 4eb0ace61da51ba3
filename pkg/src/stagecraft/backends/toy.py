"""Deterministic toy diffusion backend.

The toy world is built from procedural prompt patterns: each prompt hashes
to a smooth grayscale field, and the reverse process is a contraction
toward the conditioning's pattern.  That keeps every stage of the pipeline
(reference generation, guidance extraction, masked substitution, detection,
embedding) exactly inspectable while preserving the real control flow.

Pattern construction: a prompt is split on ", " into segments; each segment
seeds a coarse Gaussian grid (PATTERN_CELLS per axis) that is bilinearly
sampled at the requested resolution, so the same continuous field backs any
grid size.  Segments are averaged with a variance-preserving 1/sqrt(k)
weight, centered at mid-gray.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..imaging import (
    bilinear_resize,
    block_reduce_mean,
    nearest_resize,
    stable_hash64,
    to_float01,
    to_uint8,
)
from .base import (
    BackendError,
    Conditioning,
    DiffusionBackend,
    NoiseSchedule,
    StepHook,
    StepOutOfRange,
)

# Coarse cells per axis in a prompt pattern. Few enough that patterns
# survive the resize chain (canvas -> bbox -> block mean), many enough that
# template correlations between unrelated prompts stay near zero.
PATTERN_CELLS = 14

# Peak-to-mid amplitude of patterns around the 0.5 gray level.
PATTERN_AMPLITUDE = 0.42

# Reverse-process contraction rate per step toward the conditioning target.
DEFAULT_ETA = 0.06

# Additive pull of the lineart edge map, when present.
DEFAULT_LINEART_WEIGHT = 0.006

# Negative prompts subtract this fraction of their pattern from the target.
DEFAULT_NEGATIVE_WEIGHT = 0.25

# Adapter conditioning: weight of the current prompt pattern versus the
# injected reference image. Deliberately asymmetric so that an attribute
# edit moves the output measurably toward the new prompt.
DEFAULT_ADAPTER_PROMPT_WEIGHT = 0.65

_MASK64 = (1 << 64) - 1


def gaussian_stream(seed: int, t: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard-normal raster keyed by (seed, t), random-access per step.

    Uses a counter-based generator so any step's noise can be regenerated
    without drawing the preceding steps.
    """
    key = ((seed & _MASK64) << 64) | (t & _MASK64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal(shape)


def _segment_field(segment: str, grid: tuple[int, int], seed: int) -> np.ndarray:
    cells = stable_hash64("prompt-pattern", seed, segment)
    rng = np.random.Generator(np.random.Philox(key=cells))
    coarse = rng.standard_normal((PATTERN_CELLS, PATTERN_CELLS))
    return bilinear_resize(coarse, grid)


def normalize_prompt(prompt: str) -> str:
    return " ".join(prompt.split()).lower()


def prompt_target(
    prompt: str, grid: tuple[int, int] = (64, 64), seed: int = 0
) -> np.ndarray:
    """Deterministic pattern for a prompt, sampled at ``grid`` resolution.

    Comma-separated segments contribute independent fields combined with a
    variance-preserving average, so a concatenated global prompt correlates
    with each of its parts.
    """
    normalized = normalize_prompt(prompt)
    if not normalized:
        raise ValueError("prompt must be non-empty")
    segments = [s.strip() for s in normalized.split(",") if s.strip()]
    stack = np.stack([_segment_field(s, grid, seed) for s in segments])
    field = stack.sum(axis=0) / np.sqrt(len(segments))
    return 0.5 + PATTERN_AMPLITUDE * field


def forward_diffuse(
    x0: np.ndarray, t: int, schedule: NoiseSchedule, seed: int = 0
) -> np.ndarray:
    """sqrt(a_t) * x0 + sqrt(1 - a_t) * eps with eps from the (seed, t) stream."""
    if not 0 <= t < schedule.steps:
        raise StepOutOfRange(f"step {t} outside [0, {schedule.steps})")
    a = schedule.alphas_cum[t]
    eps = gaussian_stream(seed, t, np.asarray(x0).shape)
    return np.sqrt(a) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - a) * eps


class ToyDiffusionBackend(DiffusionBackend):
    """Single-channel latent backend with closed-form dynamics.

    encode/decode are identity (up to uint8 quantization) on the latent
    grid and block-mean / nearest-upsample between canvas and latent
    resolutions.  The reverse step contracts toward the conditioning's
    pattern, optionally nudged by lineart edges.
    """

    def __init__(
        self,
        canvas: tuple[int, int] = (512, 512),
        latent_shape: tuple[int, int] = (64, 64),
        steps: int = 50,
        eta: float = DEFAULT_ETA,
        lineart_weight: float = DEFAULT_LINEART_WEIGHT,
        negative_weight: float = DEFAULT_NEGATIVE_WEIGHT,
        adapter_prompt_weight: float = DEFAULT_ADAPTER_PROMPT_WEIGHT,
        pattern_seed: int = 0,
    ):
        if not 0.0 < eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        self.canvas = canvas
        self.latent_shape = latent_shape
        self.schedule = NoiseSchedule.quadratic(steps)
        self.eta = eta
        self.lineart_weight = lineart_weight
        self.negative_weight = negative_weight
        self.adapter_prompt_weight = adapter_prompt_weight
        self.pattern_seed = pattern_seed

    # -- raster plumbing ----------------------------------------------------

    def encode(self, image: np.ndarray) -> np.ndarray:
        raster = to_float01(image)
        if raster.shape == self.latent_shape:
            return raster
        return block_reduce_mean(raster, self.latent_shape)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        quantized = to_uint8(latent)
        if quantized.shape == (self.canvas[1], self.canvas[0]):
            return quantized
        return nearest_resize(quantized, (self.canvas[1], self.canvas[0]))

    # -- forward process ----------------------------------------------------

    def forward_diffuse(self, x0: np.ndarray, t: int, seed: int = 0) -> np.ndarray:
        return forward_diffuse(x0, t, self.schedule, seed)

    # -- reverse process ----------------------------------------------------

    def pattern(self, prompt: str, grid: Optional[tuple[int, int]] = None) -> np.ndarray:
        return prompt_target(prompt, grid or self.latent_shape, self.pattern_seed)

    def pull_target(self, conditioning: Conditioning) -> np.ndarray:
        """The fixed point the reverse process contracts toward."""
        if not conditioning.global_prompt.strip():
            raise BackendError("conditioning needs a non-empty prompt")
        target = self.pattern(conditioning.global_prompt)
        if conditioning.adapter_reference is not None:
            w = self.adapter_prompt_weight
            target = w * target + (1.0 - w) * self.encode(conditioning.adapter_reference)
        if conditioning.negative_prompt.strip():
            target = target - self.negative_weight * self.pattern(
                conditioning.negative_prompt
            )
        return target

    def denoise_step(
        self, z_t: np.ndarray, t: int, conditioning: Conditioning
    ) -> np.ndarray:
        if t < 1:
            raise StepOutOfRange(f"denoise_step needs t >= 1, got {t}")
        z = np.asarray(z_t, dtype=np.float64)
        target = self.pull_target(conditioning)
        if target.shape != z.shape:
            raise BackendError(
                f"target shape {target.shape} does not match latent {z.shape}"
            )
        step = z + self.eta * (target - z)
        if conditioning.lineart is not None:
            lineart = np.asarray(conditioning.lineart, dtype=np.float64)
            if lineart.shape != z.shape:
                raise BackendError(
                    f"lineart shape {lineart.shape} does not match latent {z.shape}"
                )
            step = step + self.lineart_weight * (lineart - lineart.mean())
        return step

    def initial_noise(self, steps: int, seed: int) -> np.ndarray:
        # Keyed one past the last forward step so it never collides with
        # any forward_diffuse stream of the same seed.
        return gaussian_stream(seed, steps, self.latent_shape)

    def generate(
        self,
        prompt: str = "",
        conditioning: Optional[Conditioning] = None,
        steps: Optional[int] = None,
        seed: int = 0,
        step_hook: Optional[StepHook] = None,
    ) -> np.ndarray:
        cond = conditioning if conditioning is not None else Conditioning(global_prompt=prompt)
        total = steps if steps is not None else self.schedule.steps
        if total < 1:
            raise BackendError("steps must be >= 1")
        hooks = list(self.persistent_hooks())
        if step_hook is not None:
            hooks.append(step_hook)
        z = self.initial_noise(total, seed)
        for t in range(total - 1, -1, -1):
            for hook in hooks:
                z = hook(z, t)
            if t > 0:
                z = self.denoise_step(z, t, cond)
        return self.decode(z)

    def with_steps(self, steps: int) -> "ToyDiffusionBackend":
        clone = ToyDiffusionBackend(
            canvas=self.canvas,
            latent_shape=self.latent_shape,
            steps=steps,
            eta=self.eta,
            lineart_weight=self.lineart_weight,
            negative_weight=self.negative_weight,
            adapter_prompt_weight=self.adapter_prompt_weight,
            pattern_seed=self.pattern_seed,
        )
        return clone
