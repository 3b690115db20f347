"""File-tree session store: one directory per session, atomic manifest
updates, full reload from disk on startup."""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import ConflictError, InvalidArgumentError, NotFoundError
from ..persistence import SESSION_MANIFEST, atomic_write_json, record_exists

NUM_CELLS = 6

SESSION_STATUS = ("extracting", "ready", "failed")
CELL_STATUS = ("empty", "queued", "running", "done", "failed")


@dataclass
class ResultEntry:
    ordinal: int
    image: str | None  # file name under the cell directory, None on failure
    manifest: str | None = None
    error: str | None = None


@dataclass
class CellState:
    index: int
    prompt_history: list[str] = field(default_factory=list)
    results: list[ResultEntry] = field(default_factory=list)
    imported_from: tuple[int, int] | None = None  # (cell index, result ordinal)
    status: str = "empty"


@dataclass
class SessionState:
    id: str
    caption: str = ""
    object_prompt: str | None = None
    status: str = "extracting"
    error: str | None = None
    reconstruction_psnr: float | None = None
    created_at: float = field(default_factory=time.time)
    updated_at: float = field(default_factory=time.time)
    cells: list[CellState] = field(default_factory=lambda: [CellState(i) for i in range(NUM_CELLS)])

    def cell(self, index: int) -> CellState:
        if not 0 <= index < NUM_CELLS:
            raise InvalidArgumentError(f"cell index must be in [0, {NUM_CELLS - 1}]")
        return self.cells[index]


def _session_from_dict(payload: dict) -> SessionState:
    cells = []
    for c in payload.get("cells", []):
        cells.append(
            CellState(
                index=c["index"],
                prompt_history=list(c.get("prompt_history", [])),
                results=[ResultEntry(**r) for r in c.get("results", [])],
                imported_from=tuple(c["imported_from"]) if c.get("imported_from") else None,
                status=c.get("status", "empty"),
            )
        )
    while len(cells) < NUM_CELLS:
        cells.append(CellState(len(cells)))
    return SessionState(
        id=payload["id"],
        caption=payload.get("caption", ""),
        object_prompt=payload.get("object_prompt"),
        status=payload.get("status", "extracting"),
        error=payload.get("error"),
        reconstruction_psnr=payload.get("reconstruction_psnr"),
        created_at=payload.get("created_at", 0.0),
        updated_at=payload.get("updated_at", 0.0),
        cells=cells,
    )


class SessionStore:
    """Threadsafe registry over the session directory tree."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._sessions: dict[str, SessionState] = {}
        self._reload()

    def _reload(self) -> None:
        """Rebuild state from disk; runtime-only states are normalized since
        any in-flight jobs died with the previous process."""
        for manifest in sorted(self.sessions_dir.glob(f"*/{SESSION_MANIFEST}")):
            try:
                with open(manifest) as fh:
                    session = _session_from_dict(json.load(fh))
            except (json.JSONDecodeError, KeyError):
                continue
            session_dir = manifest.parent
            if record_exists(session_dir):
                session.status = "ready"
            elif session.status != "failed":
                session.status = "failed"
                session.error = session.error or "interrupted before extraction finished"
            for cell in session.cells:
                if cell.status in ("queued", "running"):
                    cell.status = "done" if any(r.image for r in cell.results) else "empty"
            self._sessions[session.id] = session

    # -- lookup -------------------------------------------------------------

    def session_dir(self, session_id: str) -> Path:
        return self.sessions_dir / session_id

    def get(self, session_id: str) -> SessionState:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise NotFoundError(f"unknown session {session_id}")
            return session

    def list_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._sessions)

    # -- mutation -----------------------------------------------------------

    def create(self, caption: str, object_prompt: str | None) -> SessionState:
        session = SessionState(id=uuid.uuid4().hex[:12], caption=caption, object_prompt=object_prompt)
        with self._lock:
            self._sessions[session.id] = session
            self.session_dir(session.id).mkdir(parents=True, exist_ok=True)
            self._persist(session)
        return session

    def update(self, session_id: str, mutate) -> SessionState:
        """Apply ``mutate(session)`` under the lock and persist atomically."""
        with self._lock:
            session = self.get(session_id)
            mutate(session)
            session.updated_at = time.time()
            self._persist(session)
            return session

    def _persist(self, session: SessionState) -> None:
        payload = asdict(session)
        atomic_write_json(self.session_dir(session.id) / SESSION_MANIFEST, payload)

    # -- domain rules -------------------------------------------------------

    def require_ready(self, session_id: str) -> SessionState:
        session = self.get(session_id)
        if session.status != "ready":
            raise ConflictError(f"session {session_id} is {session.status}, not ready")
        return session

    def check_import(self, session: SessionState, from_cell: int, ordinal: int, to_cell: int) -> None:
        source = session.cell(from_cell)
        session.cell(to_cell)
        entry = next((r for r in source.results if r.ordinal == ordinal and r.image), None)
        if entry is None:
            raise NotFoundError(f"cell {from_cell} has no result {ordinal}")
        # lineage must stay acyclic: walking up from the source cell must
        # never reach the destination
        seen = set()
        cursor: int | None = from_cell
        while cursor is not None and cursor not in seen:
            if cursor == to_cell:
                raise InvalidArgumentError("import would create a lineage cycle")
            seen.add(cursor)
            parent = session.cell(cursor).imported_from
            cursor = parent[0] if parent else None
