"""HTTP service, CLI, and persistence."""
from .app import SessionManager, create_app
from .storage import BlobStore, DataStore, SessionStorage

__all__ = ["BlobStore", "DataStore", "SessionManager", "SessionStorage", "create_app"]
