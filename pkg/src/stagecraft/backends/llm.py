"""LLM client implementations: scripted (deterministic) and HTTP."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence, Union

import yaml

from .base import BackendError, LlmClient


class ScriptedLlmClient(LlmClient):
    """Replays a fixed list of responses, one per complete() call.

    Scripts come from a YAML/JSON file holding either a plain list of
    response strings or a mapping from 1-based call index to response.
    Exhausting the script raises, which surfaces unplanned retries in
    tests instead of silently looping.
    """

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedLlmClient":
        raw = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(raw)
        return cls.from_script(data)

    @classmethod
    def from_script(cls, data) -> "ScriptedLlmClient":
        if isinstance(data, dict) and "responses" in data:
            data = data["responses"]
        if isinstance(data, dict):
            items = sorted(data.items(), key=lambda kv: int(kv[0]))
            responses = [str(v) for _, v in items]
        elif isinstance(data, list):
            responses = [str(v) for v in data]
        else:
            raise BackendError("llm script must be a list or an index mapping")
        return cls(responses)

    def complete(self, prompt: str, params: Optional[dict] = None) -> str:
        self.calls.append(prompt)
        if len(self.calls) > len(self.responses):
            raise BackendError(
                f"scripted llm exhausted after {len(self.responses)} responses"
            )
        return self.responses[len(self.calls) - 1]


class HttpLlmClient(LlmClient):
    """Plain-text completion over HTTP: POST the prompt, read the body."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def complete(self, prompt: str, params: Optional[dict] = None) -> str:
        import requests

        headers = {"Content-Type": "text/plain; charset=utf-8"}
        if params:
            headers["X-Completion-Params"] = json.dumps(params, sort_keys=True)
        try:
            response = requests.post(
                self.endpoint,
                data=prompt.encode("utf-8"),
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
        except Exception as exc:  # noqa: BLE001 - adapter boundary
            raise BackendError(f"llm endpoint failed: {exc}") from exc
        return response.text
