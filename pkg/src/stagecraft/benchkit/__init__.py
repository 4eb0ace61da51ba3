"""Benchmark dialogue construction: pools, templates, repair, validation."""
from .builder import BuildError, BuildReport, build_corpus, build_dialogue
from .corrections import (
    CorrectionReport,
    correct_dialogue,
    validate_dialogue,
)
from .pools import NUMBER_VALUES, NUMBER_WORDS, RELATIONS, CharacterPools, load_pools
from .repair import RepairFailure, RepairReport, repair_format
from .synth import (
    Selection,
    SyntheticDialogueLlm,
    TemplateError,
    build_editing_prompt,
    build_prompt,
    build_story_prompt,
    sample_characters,
)
from .types import (
    BenchDialogue,
    BenchTurn,
    corpus_from_json,
    corpus_to_json,
    dialogue_from_json,
    dialogue_to_json,
    dumps_corpus,
    loads_corpus,
)

__all__ = [
    "BenchDialogue",
    "BenchTurn",
    "BuildError",
    "BuildReport",
    "CharacterPools",
    "CorrectionReport",
    "NUMBER_VALUES",
    "NUMBER_WORDS",
    "RELATIONS",
    "RepairFailure",
    "RepairReport",
    "Selection",
    "SyntheticDialogueLlm",
    "TemplateError",
    "build_corpus",
    "build_dialogue",
    "build_editing_prompt",
    "build_prompt",
    "build_story_prompt",
    "correct_dialogue",
    "corpus_from_json",
    "corpus_to_json",
    "dialogue_from_json",
    "dialogue_to_json",
    "dumps_corpus",
    "load_pools",
    "loads_corpus",
    "repair_format",
    "sample_characters",
    "validate_dialogue",
]
