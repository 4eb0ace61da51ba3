"""Backend contracts: diffusion, LLM, detection, segmentation, embedding.

The pipeline is written against these interfaces.  Desk-scale runs use the
deterministic implementations in :mod:`stagecraft.backends.toy` and
:mod:`stagecraft.backends.vision`; remote adapters can satisfy the same
contracts against real services.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from ..promptbook import BoundingBox


class BackendError(RuntimeError):
    """A backend failed to produce a result."""


class StepOutOfRange(ValueError):
    """A diffusion step index fell outside [0, T)."""


class DimensionMismatch(ValueError):
    """Raster shapes disagree where they must align."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal fractions for the forward process.

    ``alphas_cum[t]`` is the fraction of the clean latent surviving at step
    t.  Monotone non-increasing with alphas_cum[0] == 1 and
    alphas_cum[T-1] == 0, so step 0 is the identity and the last step is
    pure noise.
    """

    alphas_cum: tuple[float, ...]

    def __post_init__(self):
        a = self.alphas_cum
        if not a:
            raise ValueError("schedule must have at least one step")
        if any(a[i] < a[i + 1] for i in range(len(a) - 1)):
            raise ValueError("alphas_cum must be monotone non-increasing")
        if not (min(a) >= 0.0 and max(a) <= 1.0):
            raise ValueError("alphas_cum values must lie in [0, 1]")
        if a[0] != 1.0:
            raise ValueError("alphas_cum[0] must be exactly 1")
        if len(a) >= 2 and a[-1] != 0.0:
            raise ValueError("alphas_cum[T-1] must be exactly 0")

    @property
    def steps(self) -> int:
        return len(self.alphas_cum)

    @staticmethod
    def linear(steps: int) -> "NoiseSchedule":
        if steps < 1:
            raise ValueError("steps must be >= 1")
        return NoiseSchedule(tuple(np.linspace(1.0, 0.0, steps))) if steps > 1 \
            else NoiseSchedule((1.0,))

    @staticmethod
    def quadratic(steps: int) -> "NoiseSchedule":
        """1 - (t/(T-1))^2: little noise at low indices, pure noise at T-1.

        The gentle low-index ramp keeps late-substituted guidance latents
        close to their clean content, which the masked-substitution loop
        relies on.
        """
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if steps == 1:
            return NoiseSchedule((1.0,))
        ts = np.linspace(0.0, 1.0, steps)
        return NoiseSchedule(tuple(1.0 - ts ** 2))


@dataclass(frozen=True)
class Conditioning:
    """Everything a denoising step may condition on.

    ``lineart``, when present, lives at the latent grid resolution.
    ``adapter_reference`` is a canvas-resolution image whose characteristics
    the output should inherit.
    """

    global_prompt: str
    negative_prompt: str = ""
    lineart: Optional[np.ndarray] = None
    adapter_reference: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float


StepHook = Callable[[np.ndarray, int], np.ndarray]


class DiffusionBackend(abc.ABC):
    """Latent-space text-to-image backend.

    Latents are single-channel float64 rasters.  Everything is a pure
    function of its inputs and the seed; two identical calls return
    bit-identical arrays.
    """

    canvas: tuple[int, int]
    latent_shape: tuple[int, int]
    schedule: NoiseSchedule

    @abc.abstractmethod
    def encode(self, image: np.ndarray) -> np.ndarray:
        """Image (canvas resolution, uint8 or float [0,1]) -> latent raster."""

    @abc.abstractmethod
    def decode(self, latent: np.ndarray) -> np.ndarray:
        """Latent raster -> uint8 image at canvas resolution."""

    @abc.abstractmethod
    def forward_diffuse(self, x0: np.ndarray, t: int, seed: int) -> np.ndarray:
        """Noise the clean latent to step t using the (seed, t) stream."""

    @abc.abstractmethod
    def denoise_step(
        self, z_t: np.ndarray, t: int, conditioning: Conditioning
    ) -> np.ndarray:
        """One reverse step: z_t -> z_{t-1}. Requires 0 < t."""

    @abc.abstractmethod
    def generate(
        self,
        prompt: str = "",
        conditioning: Optional[Conditioning] = None,
        steps: Optional[int] = None,
        seed: int = 0,
        step_hook: Optional[StepHook] = None,
    ) -> np.ndarray:
        """Full reverse loop from seeded noise; returns a uint8 image.

        ``step_hook(z, t)`` runs at every step index from T-1 down to 0
        before that step's denoise (and before the final decode at t=0),
        which is how masked latent substitution plugs in.
        """

    def register_step_hook(self, hook: StepHook) -> StepHook:
        """Install a persistent hook applied by every subsequent generate."""
        self._step_hooks: list[StepHook] = getattr(self, "_step_hooks", [])
        self._step_hooks.append(hook)
        return hook

    def unregister_step_hook(self, hook: StepHook) -> None:
        hooks = getattr(self, "_step_hooks", [])
        if hook in hooks:
            hooks.remove(hook)

    def persistent_hooks(self) -> Sequence[StepHook]:
        return tuple(getattr(self, "_step_hooks", ()))


@runtime_checkable
class Detector(Protocol):
    box_threshold: float

    def detect(self, image: np.ndarray, text: str) -> list[Detection]:
        """Scored boxes for the described object, best first."""


@runtime_checkable
class Segmenter(Protocol):
    def segment(self, image: np.ndarray, box: BoundingBox) -> np.ndarray:
        """Binary foreground mask aligned to the box crop (bool, h x w)."""


@runtime_checkable
class Embedder(Protocol):
    def embed_image(self, image: np.ndarray) -> np.ndarray:
        """Unit-norm feature vector."""

    def embed_text(self, text: str) -> np.ndarray:
        """Unit-norm feature vector comparable with image embeddings."""


class LlmClient(abc.ABC):
    """Plain-text completion interface used by the scene designer."""

    @abc.abstractmethod
    def complete(self, prompt: str, params: Optional[dict] = None) -> str:
        ...
