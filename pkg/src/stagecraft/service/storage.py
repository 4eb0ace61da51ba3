"""On-disk persistence: content-addressed blobs and session documents.

Layout:
    <data>/blobs/<sha256>.png   image bytes, deduplicated by content
    <data>/sessions/<id>/session.json
    <data>/refs/<session>/<char_id>.png (+ index.json), via ReferenceStore
"""
from __future__ import annotations

import hashlib
import json
import shutil
from pathlib import Path
from typing import Optional

import numpy as np

from ..imaging import encode_png
from ..rehearsal import ReferenceStore


class BlobStore:
    """Append-only image store keyed by content hash."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put_image(self, image: np.ndarray) -> str:
        return self.put_bytes(encode_png(image))

    def put_bytes(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.root / f"{digest}.png"
        if not path.exists():
            path.write_bytes(data)
        return digest

    def get(self, ref: str) -> bytes:
        path = self.root / f"{ref}.png"
        if not path.exists():
            raise KeyError(ref)
        return path.read_bytes()

    def exists(self, ref: str) -> bool:
        return (self.root / f"{ref}.png").exists()


class SessionStorage:
    """Session documents as JSON files, one directory per session."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.root / session_id / "session.json"

    def save(self, session_id: str, payload: dict) -> None:
        path = self._path(session_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")

    def load(self, session_id: str) -> Optional[dict]:
        path = self._path(session_id)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def delete(self, session_id: str) -> None:
        directory = self.root / session_id
        if directory.exists():
            shutil.rmtree(directory)

    def list_ids(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())


class DataStore:
    """The service's whole persistence root."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.blobs = BlobStore(self.root / "blobs")
        self.sessions = SessionStorage(self.root / "sessions")
        self.references = ReferenceStore(self.root / "refs")
