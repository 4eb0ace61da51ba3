"""Command line entry points.

    stagecraft generate   replay a scripted dialogue, write images + session
    stagecraft serve      run the HTTP session service
    stagecraft bench build   construct a benchmark corpus
    stagecraft bench gen     render turn images for a corpus
    stagecraft bench eval    score rendered images against a corpus

Errors leave machine-readable JSON on stderr with distinct exit codes:
2 for configuration problems, 3 for IO problems, 1 otherwise.
"""
from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from ..backends.config import ConfigError, build_backends, load_config
from ..backends.llm import ScriptedLlmClient
from ..benchkit import build_corpus, dumps_corpus, loads_corpus
from ..evaluator import evaluate_corpus
from ..imaging import decode_png, encode_png, stable_hash64
from ..orchestrator import ScriptError, TurnDeps, replay_session
from ..performance import GuidedRunConfig
from ..promptbook import dumps_session, serialize_prompt_book
from ..rehearsal import ReferenceStore

EXIT_CONFIG = 2
EXIT_IO = 3


def _fail(code: int, kind: str, **detail) -> None:
    sys.stderr.write(json.dumps({"error": kind, **detail}) + "\n")
    sys.exit(code)


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(EXIT_CONFIG, "config", key=exc.key, message=str(exc))
        except (OSError, FileNotFoundError) as exc:
            _fail(EXIT_IO, "io", message=str(exc))
        except (ScriptError, ValueError) as exc:
            _fail(1, "invalid", message=str(exc))

    return wrapper


@click.group()
def main():
    """Multi-turn character-consistent image generation toolkit."""


def _load_instructions(path: Path) -> list[str]:
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("instructions")
    if not isinstance(data, list) or not all(isinstance(i, str) for i in data):
        raise ScriptError(f"{path} must hold a list of instruction strings")
    return data


def _deps_from_config(config: dict, refs_root: Path | None = None) -> TurnDeps:
    bundle = build_backends(config)
    return TurnDeps(
        llm=bundle.llm,
        diffusion=bundle.diffusion,
        detector=bundle.detector,
        segmenter=bundle.segmenter,
        store=ReferenceStore(refs_root),
    )


def _run_config(config: dict, canvas: tuple[int, int], seed: int = 0) -> GuidedRunConfig:
    return GuidedRunConfig(
        steps=int(config["diffusion"].get("steps", 50)),
        ratio=float(config["diffusion"].get("guidance_ratio", 0.1)),
        seed=seed,
        canvas=canvas,
    )


@main.command()
@click.option("--script", "script_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, path_type=Path))
@cli_errors
def generate(script_path: Path, out_dir: Path, seed: int, config_path: Path | None):
    """Replay a scripted dialogue and write turn images plus session JSON."""
    config = load_config(config_path)
    instructions = _load_instructions(script_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    deps = _deps_from_config(config, refs_root=out_dir / "refs")
    canvas = tuple(config["diffusion"].get("canvas", [512, 512]))
    session, artifacts = replay_session(
        instructions,
        deps,
        _run_config(config, canvas),
        session_id="generate",
        seed=seed,
        canvas=canvas,
    )
    for art in artifacts:
        (out_dir / f"turn{art.record.index}.png").write_bytes(encode_png(art.image))
    (out_dir / "session.json").write_text(dumps_session(session), encoding="utf-8")
    click.echo(f"wrote {len(artifacts)} turns to {out_dir}")


@main.command()
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, path_type=Path))
@click.option("--data", "data_root", default="stagecraft-data", show_default=True)
@cli_errors
def serve(port: int, host: str, config_path: Path | None, data_root: str):
    """Run the HTTP session service."""
    import uvicorn

    from .app import create_app

    app = create_app(config_path=str(config_path) if config_path else None, data_root=data_root)
    uvicorn.run(app, host=host, port=port)


@main.group()
def bench():
    """Benchmark construction and evaluation."""


@bench.command("build")
@click.option("--task", required=True, type=click.Choice(["story", "editing"]))
@click.option("--count", default=20, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@cli_errors
def bench_build(task: str, count: int, seed: int, out_path: Path):
    """Construct a validated dialogue corpus."""
    dialogues, _report = build_corpus(task, count, seed)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(dumps_corpus(dialogues), encoding="utf-8")
    click.echo(f"wrote {len(dialogues)} {task} dialogues to {out_path}")


@bench.command("gen")
@click.option("--benchmark", "benchmark_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, path_type=Path))
@click.option("--limit", default=None, type=int, help="Render only the first N dialogues.")
@cli_errors
def bench_gen(benchmark_path: Path, out_dir: Path, seed: int, config_path: Path | None, limit: int | None):
    """Render turn images for a corpus by replaying its ground-truth books."""
    config = load_config(config_path)
    corpus = loads_corpus(benchmark_path.read_text(encoding="utf-8"))
    canvas = tuple(config["diffusion"].get("canvas", [512, 512]))
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = sorted(corpus, key=lambda k: (len(k), k))
    if limit is not None:
        ids = ids[:limit]
    for dialogue_id in ids:
        dialogue = corpus[dialogue_id]
        bundle = build_backends(config, require_llm=False)
        deps = TurnDeps(
            llm=ScriptedLlmClient(
                [serialize_prompt_book(t.book) for t in dialogue.turns]
            ),
            diffusion=bundle.diffusion,
            detector=bundle.detector,
            segmenter=bundle.segmenter,
            store=ReferenceStore(None),
        )
        session, artifacts = replay_session(
            [t.caption for t in dialogue.turns],
            deps,
            _run_config(config, canvas),
            session_id=dialogue_id,
            seed=stable_hash64("bench-gen", seed, dialogue_id) & 0x7FFFFFFF,
            canvas=canvas,
        )
        dialogue_dir = out_dir / dialogue_id
        dialogue_dir.mkdir(parents=True, exist_ok=True)
        for art in artifacts:
            (dialogue_dir / f"turn{art.record.index}.png").write_bytes(
                encode_png(art.image)
            )
    click.echo(f"rendered {len(ids)} dialogues to {out_dir}")


@bench.command("eval")
@click.option("--generated", "generated_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--benchmark", "benchmark_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--metrics", default="accs,atis,afid,alignment", show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path(path_type=Path))
@click.option("--limit", default=None, type=int, help="Evaluate only the first N dialogues.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, path_type=Path))
@cli_errors
def bench_eval(
    generated_dir: Path,
    benchmark_path: Path,
    metrics: str,
    report_path: Path,
    limit: int | None,
    config_path: Path | None,
):
    """Score rendered turn images against their corpus."""
    wanted = {m.strip() for m in metrics.split(",") if m.strip()}
    unknown = wanted - {"accs", "atis", "afid", "alignment"}
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    config = load_config(config_path)
    bundle = build_backends(config, require_llm=False)
    corpus = loads_corpus(benchmark_path.read_text(encoding="utf-8"))
    images_by_dialogue = {}
    ids = sorted(corpus, key=lambda k: (len(k), k))
    if limit is not None:
        ids = ids[:limit]
    for dialogue_id in ids:
        dialogue_dir = generated_dir / dialogue_id
        if not dialogue_dir.is_dir():
            continue
        images = []
        for turn_no in range(1, len(corpus[dialogue_id].turns) + 1):
            path = dialogue_dir / f"turn{turn_no}.png"
            if not path.exists():
                break
            images.append(decode_png(path.read_bytes()))
        if len(images) == len(corpus[dialogue_id].turns):
            images_by_dialogue[dialogue_id] = images
    report = evaluate_corpus(
        corpus, images_by_dialogue, bundle.detector, bundle.embedder
    )
    payload = report.as_dict()
    keep_keys = {
        "accs": {"accs"},
        "atis": {"atis"},
        "afid": {"afid", "afid_corpus_pooled"},
        "alignment": {"alignment_accuracy"},
    }
    keep = set().union(*(keep_keys[m] for m in wanted))
    keep |= {"detection_misses", "dialogues"}
    payload["aggregates"] = {
        k: v for k, v in payload["aggregates"].items() if k in keep
    }
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    click.echo(f"evaluated {len(images_by_dialogue)} dialogues -> {report_path}")


if __name__ == "__main__":
    main()
