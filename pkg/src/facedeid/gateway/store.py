"""File-backed session store and single-writer session ownership.

Layout under the store root:

    sessions/<id>/session.json     annotation state (core session format)
    sessions/<id>/detections.json  raw detector output artifact
    sessions/<id>/crops/           extracted face crops
    sessions/<id>/renders/         privatized frames + render log
    sessions/<id>/reports/         evaluation reports
    jobs.json                      pipeline scheduler state

All writes go through a temp file + atomic rename.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import threading
import uuid
from pathlib import Path

from PIL import Image

from ..core import (
    AnnotationSession,
    FaceDeidError,
    SessionManifest,
    ValidationError,
    deserialize_session,
    serialize_session,
)
from ..engine import new_session
from . import scheduler

FRAME_FILE_RE = re.compile(r"^(\d{6})\.png$")


class RevisionConflict(FaceDeidError):
    """A write carried a stale revision token."""

    def __init__(self, expected: int, current: int):
        super().__init__(f"stale revision {expected}; session is at {current}")
        self.current = current


class UnknownSession(FaceDeidError):
    pass


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: Path, doc) -> None:
    atomic_write_bytes(path, json.dumps(doc, indent=2).encode("utf-8"))


def scan_frame_dir(frame_dir: Path) -> tuple[int, int, int]:
    """Validate a frame directory; returns (frame_count, width, height)."""
    if not frame_dir.is_dir():
        raise ValidationError(f"frame directory {frame_dir} does not exist")
    indices = sorted(
        int(m.group(1)) for f in frame_dir.iterdir()
        if (m := FRAME_FILE_RE.match(f.name))
    )
    if not indices:
        raise ValidationError(f"no frame files (000000.png style) in {frame_dir}")
    count = indices[-1] + 1
    missing = sorted(set(range(count)) - set(indices))
    if missing:
        raise ValidationError(
            f"frame files not contiguous in {frame_dir}; missing indices {missing[:10]}"
        )
    with Image.open(frame_dir / f"{0:06d}.png") as im:
        width, height = im.size
    return count, width, height


class SessionStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.sessions_dir = self.root / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.jobs_path = self.root / "jobs.json"
        self._jobs_lock = threading.Lock()

    # -- sessions ------------------------------------------------------------

    def session_dir(self, session_id: str) -> Path:
        return self.sessions_dir / session_id

    def session_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "session.json"

    def create_session(self, frame_source: str | Path, fps: float = 60.0) -> AnnotationSession:
        frame_dir = Path(frame_source).resolve()
        count, width, height = scan_frame_dir(frame_dir)
        session_id = uuid.uuid4().hex[:12]
        manifest = SessionManifest(
            session_id=session_id,
            frame_count=count,
            fps=fps,
            frame_width=width,
            frame_height=height,
            frame_source=str(frame_dir),
        )
        session = new_session(manifest)
        self.save_session(session)
        return session

    def save_session(self, session: AnnotationSession) -> None:
        atomic_write_bytes(self.session_path(session.manifest.session_id),
                           serialize_session(session))

    def load_session(self, session_id: str) -> AnnotationSession:
        path = self.session_path(session_id)
        if not path.is_file():
            raise UnknownSession(f"no session {session_id!r} under {self.sessions_dir}")
        return deserialize_session(path.read_bytes())

    def list_session_ids(self) -> list[str]:
        return sorted(
            p.name for p in self.sessions_dir.iterdir()
            if (p / "session.json").is_file()
        )

    # -- scheduler state -------------------------------------------------------

    def load_jobs(self) -> scheduler.PipelineState:
        if not self.jobs_path.is_file():
            return scheduler.PipelineState()
        return scheduler.PipelineState.from_dict(json.loads(self.jobs_path.read_text()))

    def recover_jobs(self) -> scheduler.PipelineState:
        """Crash recovery at process startup: requeue jobs left mid-flight."""
        if not self.jobs_path.is_file():
            return scheduler.PipelineState()
        state = scheduler.PipelineState.recover(json.loads(self.jobs_path.read_text()))
        self.save_jobs(state)
        return state

    def save_jobs(self, state: scheduler.PipelineState) -> None:
        atomic_write_json(self.jobs_path, state.to_dict())

    def mutate_jobs(self, fn) -> scheduler.PipelineState:
        with self._jobs_lock:
            state = self.load_jobs()
            state = fn(state)
            self.save_jobs(state)
            return state


class SessionOwner:
    """Serializes all mutations for one session through one lock."""

    def __init__(self, store: SessionStore, session: AnnotationSession):
        self._store = store
        self._lock = threading.Lock()
        self._current = session

    def snapshot(self) -> AnnotationSession:
        return self._current

    def mutate(self, fn, expected_revision: int | None = None) -> AnnotationSession:
        with self._lock:
            current = self._current
            if expected_revision is not None and expected_revision != current.revision:
                raise RevisionConflict(expected_revision, current.revision)
            updated = fn(current)
            if updated is not current:
                self._store.save_session(updated)
                self._current = updated
            return self._current


class SessionRegistry:
    """Owner-per-session map; different sessions mutate fully in parallel."""

    def __init__(self, store: SessionStore):
        self.store = store
        self._owners: dict[str, SessionOwner] = {}
        self._lock = threading.Lock()

    def owner(self, session_id: str) -> SessionOwner:
        with self._lock:
            owner = self._owners.get(session_id)
            if owner is None:
                owner = SessionOwner(self.store, self.store.load_session(session_id))
                self._owners[session_id] = owner
            return owner

    def adopt(self, session: AnnotationSession) -> SessionOwner:
        with self._lock:
            owner = SessionOwner(self.store, session)
            self._owners[session.manifest.session_id] = owner
            return owner
