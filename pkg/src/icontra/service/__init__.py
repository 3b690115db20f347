"""Session service: REST layer, job queue and file-tree session store."""

from .app import DATA_DIR_ENV, MAX_UPLOAD_BYTES, create_app
from .engine_api import JobEngine, PipelineJobEngine
from .jobs import Job, JobCancelled, JobQueue
from .store import NUM_CELLS, CellState, ResultEntry, SessionState, SessionStore

__all__ = [
    "DATA_DIR_ENV",
    "MAX_UPLOAD_BYTES",
    "create_app",
    "JobEngine",
    "PipelineJobEngine",
    "Job",
    "JobCancelled",
    "JobQueue",
    "NUM_CELLS",
    "CellState",
    "ResultEntry",
    "SessionState",
    "SessionStore",
]
