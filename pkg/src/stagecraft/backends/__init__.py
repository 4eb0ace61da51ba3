"""Backend interfaces plus the deterministic desk-scale implementations."""
from .base import (
    BackendError,
    Conditioning,
    Detection,
    DiffusionBackend,
    DimensionMismatch,
    Detector,
    Embedder,
    LlmClient,
    NoiseSchedule,
    Segmenter,
    StepOutOfRange,
)
from .config import BackendBundle, ConfigError, build_backends, load_config
from .llm import HttpLlmClient, ScriptedLlmClient
from .toy import (
    ToyDiffusionBackend,
    forward_diffuse,
    gaussian_stream,
    prompt_target,
)
from .vision import (
    PatternDetector,
    PatternEmbedder,
    RectangleSegmenter,
    RuleTableDetector,
    cosine,
)

__all__ = [
    "BackendBundle",
    "BackendError",
    "Conditioning",
    "ConfigError",
    "Detection",
    "Detector",
    "DiffusionBackend",
    "DimensionMismatch",
    "Embedder",
    "HttpLlmClient",
    "LlmClient",
    "NoiseSchedule",
    "PatternDetector",
    "PatternEmbedder",
    "RectangleSegmenter",
    "RuleTableDetector",
    "ScriptedLlmClient",
    "Segmenter",
    "StepOutOfRange",
    "ToyDiffusionBackend",
    "build_backends",
    "cosine",
    "forward_diffuse",
    "gaussian_stream",
    "load_config",
    "prompt_target",
]
