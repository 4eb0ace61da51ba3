"""Character-guided generation: masked latent substitution over the reverse loop.

At every step index t from T-1 down to 0, the masked region of the running
latent is replaced with the mid-state's forward-diffused latent for that
step, except during the final stretch (t < r*T) where the latent runs free
so characters and background can blend.  The step index counts down with
the noise level: t = T-1 is pure noise, t = 0 is clean, and the forward
schedule's alphas_cum[t] is the signal fraction at that same index, so
substitution happens through the noisy phase and releases the last
ceil(r*T) indices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends.base import Conditioning, DiffusionBackend, DimensionMismatch
from .imaging import nearest_resize
from .promptbook import PromptBook, build_global_prompt
from .rehearsal import GuidanceBundle

DEFAULT_GUIDANCE_RATIO = 0.1


class ConfigError(ValueError):
    """Run configuration disagrees with the guidance bundle or backend."""


@dataclass(frozen=True)
class GuidedRunConfig:
    """Loop parameters: step count, free-tail ratio, seed, canvas."""

    steps: int = 50
    ratio: float = DEFAULT_GUIDANCE_RATIO
    seed: int = 0
    canvas: tuple[int, int] = (512, 512)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must lie in [0, 1]")


def blend_latent(
    z_t: np.ndarray,
    g_lt: np.ndarray,
    mask: np.ndarray,
    t: int,
    cfg: GuidedRunConfig,
) -> np.ndarray:
    """Masked substitution: z*(1-M) + g*M for t >= ratio*T, else z unchanged."""
    z = np.asarray(z_t, dtype=np.float64)
    if not 0 <= t < cfg.steps:
        raise ConfigError(f"step {t} outside [0, {cfg.steps})")
    if t < cfg.ratio * cfg.steps:
        return z
    g = np.asarray(g_lt, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if z.shape != g.shape or z.shape != m.shape:
        raise DimensionMismatch(
            f"latent {z.shape}, guidance {g.shape}, mask {m.shape} must agree"
        )
    return z * (1.0 - m) + g * m


def downsample_mask(mask: np.ndarray, latent_shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor mask resample; output stays strictly binary."""
    arr = np.asarray(mask)
    binary = (arr.astype(np.float64) > 0.5).astype(np.uint8)
    if binary.shape == latent_shape:
        return binary.astype(bool)
    return nearest_resize(binary, latent_shape).astype(bool)


def run_guided_generation(
    book: PromptBook,
    bundle: GuidanceBundle,
    backend: DiffusionBackend,
    cfg: GuidedRunConfig,
) -> np.ndarray:
    """The final render for one turn.

    Starts from seeded noise, applies blend_latent then the backend's
    denoise step at every index, and decodes the result.  Identical inputs
    produce identical images.
    """
    if len(bundle.latent_sequence) != cfg.steps:
        raise ConfigError(
            f"bundle holds {len(bundle.latent_sequence)} latents for "
            f"{cfg.steps} steps"
        )
    if backend.schedule.steps != cfg.steps:
        raise ConfigError(
            f"backend schedule has {backend.schedule.steps} steps, config wants "
            f"{cfg.steps}"
        )
    mask = downsample_mask(bundle.union_mask, backend.latent_shape).astype(np.float64)
    lineart = downsample_mask(bundle.lineart, backend.latent_shape).astype(np.float64)
    conditioning = Conditioning(
        global_prompt=build_global_prompt(book),
        negative_prompt=book.negative_prompt,
        lineart=lineart,
    )

    def substitute(z: np.ndarray, t: int) -> np.ndarray:
        return blend_latent(z, bundle.latent_sequence[t], mask, t, cfg)

    return backend.generate(
        conditioning=conditioning,
        steps=cfg.steps,
        seed=cfg.seed,
        step_hook=substitute,
    )
