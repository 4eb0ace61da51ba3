"""Benchmark construction and the four-metric evaluation harness.

Builds a small editing corpus with the synthetic writer (sample pools,
render the construction prompt, repair and validate the reply), renders
every dialogue through the pipeline, and scores the images: character
consistency (aCCS), text-image similarity (aTIS), feature-distribution
distance (aFID), and the four per-edit-type alignment checks.
"""
import json
from pathlib import Path

from stagecraft.backends import ScriptedLlmClient, build_backends, load_config
from stagecraft.benchkit import build_corpus, dumps_corpus
from stagecraft.evaluator import evaluate_corpus
from stagecraft.orchestrator import TurnDeps, replay_session
from stagecraft.performance import GuidedRunConfig
from stagecraft.promptbook import serialize_prompt_book
from stagecraft.rehearsal import ReferenceStore

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

dialogues, report = build_corpus("editing", count=4, seed=99)
(OUT / "corpus_demo.json").write_text(dumps_corpus(dialogues))
print(f"built {len(dialogues)} editing dialogues "
      f"({len(report.attempts)} construction notes)")
for i, d in enumerate(dialogues, start=1):
    print(f"  dialogue {i}: {list(d.characters)}, turn 1: {d.turns[0].caption!r}")

bundle = build_backends(load_config(), require_llm=False)
cfg = GuidedRunConfig(steps=50, ratio=0.1, canvas=(512, 512))
images_by_dialogue = {}
for i, dialogue in enumerate(dialogues, start=1):
    deps = TurnDeps(
        llm=ScriptedLlmClient([serialize_prompt_book(t.book) for t in dialogue.turns]),
        diffusion=bundle.diffusion,
        detector=bundle.detector,
        segmenter=bundle.segmenter,
        store=ReferenceStore(None),
    )
    _session, artifacts = replay_session(
        [t.caption for t in dialogue.turns], deps, cfg, seed=500 + i
    )
    images_by_dialogue[f"dialogue {i}"] = [a.image for a in artifacts]
print("rendered all dialogues")

corpus = {f"dialogue {i}": d for i, d in enumerate(dialogues, start=1)}
result = evaluate_corpus(
    corpus, images_by_dialogue, bundle.detector, bundle.embedder, task="editing"
)
aggregates = result.aggregates()
print("corpus aggregates:")
print(f"  aCCS {aggregates['accs']:.1f}   aTIS {aggregates['atis']:.1f}   "
      f"aFID {aggregates['afid']:.3f} (pooled {aggregates['afid_corpus_pooled']:.3f})")
print("  alignment accuracy:", {
    k: (f"{v:.0f}%" if v is not None else "n/a")
    for k, v in aggregates["alignment_accuracy"].items()
})
print(f"  detection misses: {aggregates['detection_misses']}")
(OUT / "eval_report_demo.json").write_text(json.dumps(result.as_dict(), indent=2))
print(f"wrote corpus_demo.json and eval_report_demo.json to {OUT}")
