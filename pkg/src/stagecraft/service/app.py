"""HTTP session service: create sessions, submit turns, fetch images.

Turn submission is synchronous (toy-backend turns are sub-second) and
strictly serialized per session: a second submission while one is in
flight gets 409.  Session documents persist after every turn, so a
restarted server replays GET responses byte-identically.
"""
from __future__ import annotations

import threading
import uuid
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, HTTPException, Response

from ..backends.base import BackendError
from ..backends.config import _deep_merge, build_backends, load_config
from ..backends.llm import ScriptedLlmClient
from ..orchestrator import TurnDeps, run_turn
from ..performance import GuidedRunConfig
from ..promptbook import (
    DialogueSession,
    book_to_json,
    session_from_json,
)
from ..screenwriter import DesignFailure
from .storage import DataStore


class SessionManager:
    """Owns live sessions, their backends, and their persistence."""

    def __init__(self, config: dict, data_root: Path):
        self.config = config
        self.store = DataStore(data_root)
        self.sessions: dict[str, DialogueSession] = {}
        self.payloads: dict[str, dict] = {}
        self.deps: dict[str, TurnDeps] = {}
        self.run_cfg: dict[str, GuidedRunConfig] = {}
        self.locks: dict[str, threading.Lock] = {}
        self.manager_lock = threading.Lock()
        self._restore()

    # -- persistence ---------------------------------------------------------

    def _build_runtime(self, session_id: str, overrides: Optional[dict], turns_done: int) -> None:
        config = _deep_merge(self.config, overrides) if overrides else self.config
        bundle = build_backends(config)
        if isinstance(bundle.llm, ScriptedLlmClient) and turns_done:
            # Each clean turn consumed one completion; realign the script.
            bundle.llm.calls = [""] * min(turns_done, len(bundle.llm.responses))
        self.deps[session_id] = TurnDeps(
            llm=bundle.llm,
            diffusion=bundle.diffusion,
            detector=bundle.detector,
            segmenter=bundle.segmenter,
            store=self.store.references,
        )
        self.run_cfg[session_id] = GuidedRunConfig(
            steps=int(config["diffusion"].get("steps", 50)),
            ratio=float(config["diffusion"].get("guidance_ratio", 0.1)),
            canvas=tuple(config["diffusion"].get("canvas", [512, 512])),
        )

    def _restore(self) -> None:
        for session_id in self.store.sessions.list_ids():
            payload = self.store.sessions.load(session_id)
            if payload is None:
                continue
            self.payloads[session_id] = payload
            session = session_from_json(payload["session"])
            self.sessions[session_id] = session
            self.locks[session_id] = threading.Lock()
            try:
                self._build_runtime(
                    session_id, payload.get("config_overrides"), len(session.turns)
                )
            except Exception:  # noqa: BLE001 - config may have moved; session stays readable
                self.deps.pop(session_id, None)

    def _persist(self, session_id: str) -> None:
        self.store.sessions.save(session_id, self.payloads[session_id])

    # -- lifecycle -------------------------------------------------------------

    def create_session(
        self, seed: Optional[int] = None, overrides: Optional[dict] = None
    ) -> str:
        session_id = uuid.uuid4().hex[:12]
        config = _deep_merge(self.config, overrides) if overrides else self.config
        session = DialogueSession(
            session_id=session_id,
            seed=int(seed) if seed is not None else 0,
            canvas=tuple(config["diffusion"].get("canvas", [512, 512])),
        )
        with self.manager_lock:
            self.sessions[session_id] = session
            self._build_runtime(session_id, overrides, turns_done=0)
            self.locks[session_id] = threading.Lock()
            self.payloads[session_id] = {
                "session": {
                    "session_id": session_id,
                    "seed": session.seed,
                    "canvas": list(session.canvas),
                    "turns": [],
                },
                "turns": [],
                "config_overrides": overrides,
            }
        self._persist(session_id)
        return session_id

    def delete_session(self, session_id: str) -> None:
        with self.manager_lock:
            self.sessions.pop(session_id, None)
            self.payloads.pop(session_id, None)
            self.deps.pop(session_id, None)
            self.run_cfg.pop(session_id, None)
            self.locks.pop(session_id, None)
        self.store.sessions.delete(session_id)

    # -- turns -------------------------------------------------------------------

    def submit_turn(self, session_id: str, instruction: str) -> dict:
        session = self.sessions[session_id]
        if session_id not in self.deps:
            raise HTTPException(
                status_code=409,
                detail="session backends unavailable; recreate the session",
            )
        deps = self.deps[session_id]
        cfg = self.run_cfg[session_id]
        artifacts = run_turn(session, instruction, deps, cfg)

        image_ref = self.store.blobs.put_image(artifacts.image)
        record = artifacts.record
        session.turns[-1] = type(record)(
            index=record.index,
            instruction=record.instruction,
            prompt_book=record.prompt_book,
            image_ref=image_ref,
        )
        character_images = []
        for char_id in sorted(artifacts.references):
            ref_hash = self.store.blobs.put_image(artifacts.references[char_id])
            onstage_hash = self.store.blobs.put_image(artifacts.onstage[char_id])
            character_images.append(
                {
                    "id": char_id,
                    "reference_url": f"/images/{ref_hash}",
                    "onstage_url": f"/images/{onstage_hash}",
                }
            )
        book = record.prompt_book
        payload = {
            "turn_index": record.index,
            "prompt_book": book_to_json(book, caption=instruction),
            "image_url": f"/images/{image_ref}",
            "character_images": character_images,
            "layout": [
                {"id": c.id, "prompt": c.prompt, "box": c.bbox.as_list()}
                for c in book.characters
            ],
        }
        doc = self.payloads[session_id]
        doc["session"]["turns"].append(
            {**book_to_json(book, caption=instruction), "image_ref": image_ref}
        )
        doc["turns"].append(payload)
        self._persist(session_id)
        return payload

    def history(self, session_id: str) -> dict:
        doc = self.payloads[session_id]
        return {
            "session_id": session_id,
            "seed": doc["session"]["seed"],
            "canvas": doc["session"]["canvas"],
            "turns": doc["turns"],
        }


def create_app(
    config: Optional[dict] = None,
    config_path: Optional[str] = None,
    data_root: Optional[str] = None,
) -> FastAPI:
    resolved = config if config is not None else load_config(config_path)
    manager = SessionManager(resolved, Path(data_root or "stagecraft-data"))
    app = FastAPI(title="stagecraft", version="0.1.0")
    app.state.manager = manager

    def _session_or_404(session_id: str):
        if session_id not in manager.sessions:
            raise HTTPException(status_code=404, detail="unknown session")

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(default={})):
        session_id = manager.create_session(
            seed=body.get("seed"), overrides=body.get("config")
        )
        return {"session_id": session_id}

    @app.post("/sessions/{session_id}/turns")
    def submit_turn(session_id: str, body: dict = Body(...)):
        _session_or_404(session_id)
        instruction = body.get("instruction", "")
        if not isinstance(instruction, str) or not instruction.strip():
            raise HTTPException(status_code=422, detail="instruction must be non-empty")
        lock = manager.locks[session_id]
        if not lock.acquire(blocking=False):
            raise HTTPException(
                status_code=409, detail="a turn is already in flight for this session"
            )
        try:
            return manager.submit_turn(session_id, instruction.strip())
        except DesignFailure as exc:
            raise HTTPException(
                status_code=422,
                detail={"message": str(exc), "transcripts": exc.transcripts},
            ) from exc
        except BackendError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        finally:
            lock.release()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        _session_or_404(session_id)
        return manager.history(session_id)

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        _session_or_404(session_id)
        manager.delete_session(session_id)
        return Response(status_code=204)

    @app.get("/images/{ref}")
    def get_image(ref: str):
        try:
            data = manager.store.blobs.get(ref)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown image")
        return Response(content=data, media_type="image/png")

    ui_dir = Path(__file__).resolve().parents[3] / "frontend" / "dist"
    if ui_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
