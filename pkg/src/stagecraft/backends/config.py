"""Backend selection from a config mapping, file, and environment.

Config shape (YAML or JSON):

    llm:
      kind: mock | http
      script: path/to/script.yaml      # mock
      endpoint: http://...             # http
    diffusion:
      kind: toy | http
      canvas: [512, 512]
      steps: 50
      seed: 0
    vision:
      kind: mock | http
      box_threshold: 0.5
      text_threshold: 0.25

Every key can be overridden from the environment with the STAGECRAFT_
prefix and double underscores for nesting, e.g. STAGECRAFT_DIFFUSION__STEPS=30.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .base import BackendError, DiffusionBackend, LlmClient
from .llm import HttpLlmClient, ScriptedLlmClient
from .toy import ToyDiffusionBackend
from .vision import PatternDetector, PatternEmbedder, RectangleSegmenter

ENV_PREFIX = "STAGECRAFT_"


class ConfigError(ValueError):
    """A required config key is missing or malformed."""

    def __init__(self, key: str, message: str = "missing or invalid"):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


DEFAULT_CONFIG: dict[str, Any] = {
    "llm": {"kind": "mock", "script": None, "endpoint": None, "timeout": 30.0},
    "diffusion": {
        "kind": "toy",
        "canvas": [512, 512],
        "latent": [64, 64],
        "steps": 50,
        "endpoint": None,
        "pattern_seed": 0,
    },
    "vision": {
        "kind": "mock",
        "box_threshold": 0.5,
        "text_threshold": 0.25,
        "endpoint": None,
    },
}


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _coerce(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _env_overrides(environ: Optional[dict] = None) -> dict:
    env = environ if environ is not None else os.environ
    overrides: dict[str, Any] = {}
    for key, value in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = overrides
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _coerce(value)
    return overrides


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[dict] = None,
    environ: Optional[dict] = None,
) -> dict:
    config = dict(DEFAULT_CONFIG)
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(raw) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("<root>", "config file must hold a mapping")
        config = _deep_merge(config, loaded)
    config = _deep_merge(config, _env_overrides(environ))
    if overrides:
        config = _deep_merge(config, overrides)
    return config


@dataclass
class BackendBundle:
    """Everything a pipeline run needs, built from one config."""

    llm: LlmClient
    diffusion: DiffusionBackend
    detector: PatternDetector
    segmenter: RectangleSegmenter
    embedder: PatternEmbedder
    config: dict


def build_llm(config: dict) -> LlmClient:
    section = config.get("llm", {})
    kind = section.get("kind")
    if kind == "mock":
        script = section.get("script")
        if script is None:
            raise ConfigError("llm.script", "mock llm needs a script file")
        return ScriptedLlmClient.from_file(script)
    if kind == "http":
        endpoint = section.get("endpoint")
        if not endpoint:
            raise ConfigError("llm.endpoint", "http llm needs an endpoint")
        return HttpLlmClient(endpoint, timeout=float(section.get("timeout", 30.0)))
    raise ConfigError("llm.kind", f"unknown kind {kind!r}")


def build_diffusion(config: dict) -> DiffusionBackend:
    section = config.get("diffusion", {})
    kind = section.get("kind")
    if kind == "toy":
        canvas = tuple(section.get("canvas", [512, 512]))
        latent = tuple(section.get("latent", [64, 64]))
        return ToyDiffusionBackend(
            canvas=canvas,
            latent_shape=latent,
            steps=int(section.get("steps", 50)),
            pattern_seed=int(section.get("pattern_seed", 0)),
        )
    if kind == "http":
        raise ConfigError(
            "diffusion.kind", "http diffusion adapter is not bundled; use toy"
        )
    raise ConfigError("diffusion.kind", f"unknown kind {kind!r}")


def build_vision(config: dict) -> tuple[PatternDetector, RectangleSegmenter, PatternEmbedder]:
    section = config.get("vision", {})
    kind = section.get("kind")
    if kind == "mock":
        diffusion = config.get("diffusion", {})
        latent = tuple(diffusion.get("latent", [64, 64]))
        detector = PatternDetector(
            box_threshold=float(section.get("box_threshold", 0.5)),
            text_threshold=float(section.get("text_threshold", 0.25)),
            detection_shape=latent,
            pattern_seed=int(diffusion.get("pattern_seed", 0)),
        )
        return detector, RectangleSegmenter(), PatternEmbedder(
            pattern_seed=int(diffusion.get("pattern_seed", 0))
        )
    if kind == "http":
        raise ConfigError("vision.kind", "http vision adapter is not bundled; use mock")
    raise ConfigError("vision.kind", f"unknown kind {kind!r}")


def build_backends(config: dict, require_llm: bool = True) -> BackendBundle:
    detector, segmenter, embedder = build_vision(config)
    llm: LlmClient
    if require_llm:
        llm = build_llm(config)
    else:
        llm = ScriptedLlmClient([])
    return BackendBundle(
        llm=llm,
        diffusion=build_diffusion(config),
        detector=detector,
        segmenter=segmenter,
        embedder=embedder,
        config=config,
    )
