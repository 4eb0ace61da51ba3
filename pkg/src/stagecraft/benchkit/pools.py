"""Character pools backing benchmark dialogue sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

EXPECTED_SIZES = {"fruit": 50, "object": 100, "animal": 35, "human": 7, "background": 50}

NUMBER_WORDS = ("two", "three", "four", "five")
NUMBER_VALUES = {"two": 2, "three": 3, "four": 4, "five": 5}
RELATIONS = ("to the left of", "to the right of", "to the top of", "to the down of")


@dataclass(frozen=True)
class CharacterPools:
    fruit: tuple[str, ...]
    object: tuple[str, ...]
    animal: tuple[str, ...]
    human: tuple[str, ...]
    background: tuple[str, ...]

    def __post_init__(self):
        for name in EXPECTED_SIZES:
            values = getattr(self, name)
            if len(values) != len(set(values)):
                raise ValueError(f"{name} pool holds duplicates")

    @property
    def story_characters(self) -> tuple[str, ...]:
        return self.human + self.animal

    @property
    def editing_characters(self) -> tuple[str, ...]:
        return self.object + self.fruit


def load_pools(path: Optional[Union[str, Path]] = None) -> CharacterPools:
    """Load pools from a JSON file, defaulting to the bundled lists."""
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    else:
        data = json.loads(
            resources.files("stagecraft.benchkit").joinpath("data/pools.json")
            .read_text(encoding="utf-8")
        )
    return CharacterPools(
        fruit=tuple(data["fruit"]),
        object=tuple(data["object"]),
        animal=tuple(data["animal"]),
        human=tuple(data["human"]),
        background=tuple(data["background"]),
    )
