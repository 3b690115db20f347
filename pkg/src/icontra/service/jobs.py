"""FIFO job queue with a single worker per accelerator device."""

from __future__ import annotations

import logging
import queue
import threading
import uuid
from dataclasses import dataclass, field

from ..errors import NotFoundError

log = logging.getLogger(__name__)

JOB_STATES = ("queued", "running", "done", "failed")


class JobCancelled(Exception):
    pass


@dataclass
class Job:
    id: str
    session_id: str
    cell_index: int | None
    kind: str  # "extract" | "generate"
    state: str = "queued"
    progress: tuple[int, int] = (0, 0)
    phase: str = ""
    error: str | None = None
    result_path: str | None = None
    cancel_requested: bool = False
    _done: threading.Event = field(default_factory=threading.Event, repr=False)

    def wait(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)


class JobQueue:
    """One worker thread; jobs run strictly sequentially in submit order."""

    def __init__(self):
        self._queue: "queue.Queue[tuple[Job, callable]]" = queue.Queue()
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._run, name="icontra-worker", daemon=True)
        self._stopping = False
        self._worker.start()

    def submit(self, session_id: str, cell_index: int | None, kind: str, fn) -> Job:
        """``fn(job, progress)`` runs on the worker; ``progress(step, total,
        phase)`` is safe to call from it and raises once cancellation was
        requested (next step boundary)."""
        job = Job(id=uuid.uuid4().hex[:12], session_id=session_id, cell_index=cell_index, kind=kind)
        with self._lock:
            self._jobs[job.id] = job
        self._queue.put((job, fn))
        return job

    def get(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise NotFoundError(f"unknown job {job_id}")
            return job

    def cancel(self, job_id: str) -> None:
        self.get(job_id).cancel_requested = True

    def stop(self) -> None:
        self._stopping = True
        self._queue.put((None, None))
        self._worker.join(timeout=5)

    def _run(self) -> None:
        while True:
            job, fn = self._queue.get()
            if job is None:
                return
            if job.cancel_requested:
                job.state = "failed"
                job.error = "cancelled"
                job._done.set()
                continue
            job.state = "running"

            def progress(step: int, total: int, phase: str, _job=job):
                _job.progress = (step, total)
                _job.phase = phase
                if _job.cancel_requested:
                    raise JobCancelled()

            try:
                fn(job, progress)
                job.state = "done"
            except JobCancelled:
                job.state = "failed"
                job.error = "cancelled"
            except Exception as err:  # worker must survive any job failure
                log.exception("job %s failed", job.id)
                job.state = "failed"
                job.error = str(err)
            finally:
                job._done.set()
