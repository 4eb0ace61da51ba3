from __future__ import annotations

import json
from pathlib import Path

import pytest

from stagecraft.backends import ScriptedLlmClient, build_backends, load_config
from stagecraft.benchkit.types import BenchDialogue, dialogue_from_json
from stagecraft.orchestrator import TurnDeps, replay_session
from stagecraft.performance import GuidedRunConfig
from stagecraft.promptbook import serialize_prompt_book
from stagecraft.rehearsal import ReferenceStore

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture_dialogue(name: str) -> BenchDialogue:
    return dialogue_from_json(
        json.loads((FIXTURES / name).read_text(encoding="utf-8"))
    )


@pytest.fixture(scope="session")
def bundle():
    # One shared backend set: the detector's template caches make repeated
    # detection across tests much cheaper.
    return build_backends(load_config(), require_llm=False)


@pytest.fixture(scope="session")
def editing_dialogue() -> BenchDialogue:
    return load_fixture_dialogue("editing_dialogue.json")


@pytest.fixture(scope="session")
def story_dialogue() -> BenchDialogue:
    return load_fixture_dialogue("story_dialogue.json")


def replay_dialogue(dialogue: BenchDialogue, bundle, seed: int = 11, ratio: float = 0.1):
    """Replay a benchmark dialogue with its ground-truth books as the script."""
    deps = TurnDeps(
        llm=ScriptedLlmClient(
            [serialize_prompt_book(t.book) for t in dialogue.turns]
        ),
        diffusion=bundle.diffusion,
        detector=bundle.detector,
        segmenter=bundle.segmenter,
        store=ReferenceStore(None),
    )
    cfg = GuidedRunConfig(steps=50, ratio=ratio, canvas=(512, 512))
    return replay_session(
        [t.caption for t in dialogue.turns], deps, cfg, seed=seed
    )


@pytest.fixture(scope="session")
def editing_replay(editing_dialogue, bundle):
    """The Appendix-style editing dialogue run end to end once per session."""
    session, artifacts = replay_dialogue(editing_dialogue, bundle, seed=11)
    return session, artifacts
