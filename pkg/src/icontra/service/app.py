"""REST service over the session directory tree.

All accelerator work funnels through one FIFO worker; HTTP handlers only
validate, enqueue and read snapshots.
"""

from __future__ import annotations

import io
import os
import shutil
import threading
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image

from ..engine import ConceptTransferEngine, EngineConfig, letterbox
from ..errors import (
    ConflictError,
    EmptyMaskError,
    IcontraError,
    InvalidArgumentError,
    NotFoundError,
)

__all__ = ["create_app", "DATA_DIR_ENV", "MAX_UPLOAD_BYTES"]
from ..persistence import SOURCE_IMAGE, cell_dir, save_image_png
from ..transfer import AttentionControlConfig, EditRequest
from .engine_api import JobEngine, PipelineJobEngine
from .jobs import JobQueue
from .schemas import (
    GenerateBody,
    ImportBody,
    JobAccepted,
    JobView,
    SessionCreated,
    SessionView,
    cell_view,
    job_view,
    session_view,
)
from .store import ResultEntry, SessionStore

DATA_DIR_ENV = "ICONTRA_DATA_DIR"
MAX_UPLOAD_BYTES = 10 * 1024 * 1024

_ERROR_STATUS = {
    InvalidArgumentError: 400,
    EmptyMaskError: 400,
    NotFoundError: 404,
    ConflictError: 409,
}


def _status_for(err: IcontraError) -> int:
    for cls, status in _ERROR_STATUS.items():
        if isinstance(err, cls):
            return status
    return 500


def _edit_request(body: GenerateBody) -> EditRequest:
    defaults = AttentionControlConfig()
    blend_start = defaults.blend_start_step
    if body.blend is False:
        blend_start = None
    elif body.blend_start_step is not None:
        blend_start = body.blend_start_step
    config = AttentionControlConfig(
        start_step=body.start_step if body.start_step is not None else defaults.start_step,
        ramp_end_step=(
            body.ramp_end_step if body.ramp_end_step is not None else defaults.ramp_end_step
        ),
        start_layer=body.start_layer if body.start_layer is not None else defaults.start_layer,
        lambda_max=body.lambda_max if body.lambda_max is not None else defaults.lambda_max,
        mask_gated=body.mask_gated if body.mask_gated is not None else defaults.mask_gated,
        blend_start_step=blend_start,
    )
    return EditRequest(
        target_prompt=body.prompt,
        config=config,
        guidance_scale=body.guidance_scale if body.guidance_scale is not None else 7.5,
        seed=body.seed if body.seed is not None else 0,
    )


def create_app(
    data_dir: str | Path | None = None,
    model_path: str | None = None,
    job_engine: JobEngine | None = None,
    max_upload_bytes: int = MAX_UPLOAD_BYTES,
) -> FastAPI:
    data_dir = Path(data_dir or os.environ.get(DATA_DIR_ENV, "icontra_data"))
    store = SessionStore(data_dir)
    queue = JobQueue()
    # serializes ordinal assignment with job submission so results land in
    # ordinal order even when requests for one cell race each other
    submit_lock = threading.Lock()

    @asynccontextmanager
    async def lifespan(app):
        yield
        queue.stop()

    app = FastAPI(title="icontra", version="1.0", lifespan=lifespan)
    if job_engine is None:
        job_engine = PipelineJobEngine(ConceptTransferEngine(EngineConfig(model_path=model_path)))
    app.state.store = store
    app.state.jobs = queue
    app.state.engine = job_engine

    @app.exception_handler(IcontraError)
    async def _icontra_error(request: Request, err: IcontraError):
        return JSONResponse(status_code=_status_for(err), content={"detail": str(err)})

    # -- sessions -----------------------------------------------------------

    @app.post("/sessions", response_model=SessionCreated, status_code=201)
    async def create_session(
        image: UploadFile = File(...),
        caption: str = Form(""),
        object_prompt: str | None = Form(None),
    ):
        data = await image.read()
        if len(data) > max_upload_bytes:
            raise InvalidArgumentError(
                f"upload exceeds the {max_upload_bytes // (1024 * 1024)} MB limit"
            )
        try:
            pil = Image.open(io.BytesIO(data))
            pil.load()
        except Exception:
            raise InvalidArgumentError("could not decode the uploaded image")
        session = store.create(caption=caption, object_prompt=object_prompt)
        session_dir = store.session_dir(session.id)
        save_image_png(session_dir / SOURCE_IMAGE, letterbox(pil))

        def run(job, progress):
            try:
                psnr = job_engine.run_extract(
                    session_dir, caption, object_prompt, progress
                )
            except Exception as err:
                def fail(s):
                    s.status = "failed"
                    s.error = str(err)
                store.update(session.id, fail)
                raise

            def ok(s):
                s.status = "ready"
                s.reconstruction_psnr = psnr
            store.update(session.id, ok)

        job = queue.submit(session.id, None, "extract", run)
        return SessionCreated(session=session_view(session), job_id=job.id)

    @app.get("/sessions/{session_id}", response_model=SessionView)
    def get_session(session_id: str):
        return session_view(store.get(session_id))

    @app.get("/sessions/{session_id}/cells/{index}")
    def get_cell(session_id: str, index: int):
        session = store.get(session_id)
        return cell_view(session_id, session.cell(index))

    # -- generation ---------------------------------------------------------

    @app.post("/sessions/{session_id}/cells/{index}/generate", response_model=JobAccepted,
              status_code=202)
    def generate(session_id: str, index: int, body: GenerateBody):
        if not body.prompt.strip():
            raise InvalidArgumentError("prompt must not be empty")
        session = store.require_ready(session_id)
        session.cell(index)
        request = _edit_request(body)
        session_dir = store.session_dir(session_id)

        state = {"ordinal": 0}

        def enqueue(s):
            cell = s.cell(index)
            state["ordinal"] = len(cell.prompt_history)
            cell.prompt_history.append(body.prompt)
            cell.status = "queued"
        with submit_lock:
            session = store.update(session_id, enqueue)
            ordinal = state["ordinal"]
            imported = session.cell(index).imported_from
            if imported is not None:
                record_root = cell_dir(session_dir, index)
                from_cell, from_ordinal = imported
                derive_from = cell_dir(session_dir, from_cell) / f"result_{from_ordinal}.png"
            else:
                record_root = session_dir
                derive_from = None

            def run(job, progress):
                store.update(session_id, lambda s: setattr(s.cell(index), "status", "running"))
                try:
                    png_path = job_engine.run_generate(
                        session_dir, record_root, index, ordinal, request, derive_from, progress
                    )
                except Exception as err:
                    entry = ResultEntry(ordinal=ordinal, image=None, error=str(err))
                    def fail(s):
                        s.cell(index).results.append(entry)
                        s.cell(index).status = "failed"
                    store.update(session_id, fail)
                    raise
                entry = ResultEntry(
                    ordinal=ordinal, image=png_path.name, manifest=f"result_{ordinal}.json"
                )
                def ok(s):
                    s.cell(index).results.append(entry)
                    s.cell(index).status = "done"
                store.update(session_id, ok)
                job.result_path = f"/results/{session_id}/cells/{index}/{png_path.name}"

            job = queue.submit(session_id, index, "generate", run)
        return JobAccepted(job_id=job.id, cell=cell_view(session_id, store.get(session_id).cell(index)))

    @app.post("/sessions/{session_id}/cells/{index}/import")
    def import_result(session_id: str, index: int, body: ImportBody):
        session = store.require_ready(session_id)
        store.check_import(session, body.from_cell, body.result_ordinal, index)

        def apply(s):
            cell = s.cell(index)
            cell.imported_from = (body.from_cell, body.result_ordinal)
        session = store.update(session_id, apply)
        # drop any previously derived record so the next generation
        # re-extracts from the newly imported image
        shutil.rmtree(cell_dir(store.session_dir(session_id), index) / "record",
                      ignore_errors=True)
        return cell_view(session_id, session.cell(index))

    # -- jobs ---------------------------------------------------------------

    @app.get("/jobs/{job_id}", response_model=JobView)
    def get_job(job_id: str):
        return job_view(queue.get(job_id))

    @app.post("/jobs/{job_id}/cancel", response_model=JobView)
    def cancel_job(job_id: str):
        queue.cancel(job_id)
        return job_view(queue.get(job_id))

    # -- result files -------------------------------------------------------

    @app.get("/results/{session_id}/{file_path:path}")
    def get_result_file(session_id: str, file_path: str):
        store.get(session_id)
        root = store.session_dir(session_id).resolve()
        target = (root / file_path).resolve()
        if root not in target.parents and target != root:
            raise InvalidArgumentError("path escapes the session directory")
        if not target.is_file():
            raise NotFoundError(f"no such result file: {file_path}")
        return FileResponse(target)

    return app
