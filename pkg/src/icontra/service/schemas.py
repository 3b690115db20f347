"""Wire schemas for the REST layer."""

from __future__ import annotations

from pydantic import BaseModel, Field

from .store import CellState, SessionState
from .jobs import Job


class GenerateBody(BaseModel):
    prompt: str
    guidance_scale: float | None = None
    seed: int | None = None
    start_step: int | None = None
    ramp_end_step: int | None = None
    start_layer: int | None = None
    lambda_max: float | None = Field(default=None, ge=0.0, le=1.0)
    mask_gated: bool | None = None
    blend_start_step: int | None = None
    blend: bool | None = None  # False disables latent background blending


class ImportBody(BaseModel):
    from_cell: int
    result_ordinal: int


class ResultView(BaseModel):
    ordinal: int
    image_url: str | None
    manifest_url: str | None
    error: str | None


class CellView(BaseModel):
    index: int
    status: str
    prompt_history: list[str]
    results: list[ResultView]
    imported_from: tuple[int, int] | None


class SessionView(BaseModel):
    id: str
    caption: str
    object_prompt: str | None
    status: str
    error: str | None
    reconstruction_psnr: float | None
    source_url: str
    created_at: float
    updated_at: float
    cells: list[CellView]


class JobView(BaseModel):
    id: str
    session_id: str
    cell_index: int | None
    kind: str
    state: str
    progress: tuple[int, int]
    phase: str
    error: str | None
    result_url: str | None


class SessionCreated(BaseModel):
    session: SessionView
    job_id: str


class JobAccepted(BaseModel):
    job_id: str
    cell: CellView


def _result_view(session_id: str, cell_index: int, entry) -> ResultView:
    base = f"/results/{session_id}/cells/{cell_index}"
    return ResultView(
        ordinal=entry.ordinal,
        image_url=f"{base}/{entry.image}" if entry.image else None,
        manifest_url=f"{base}/{entry.manifest}" if entry.manifest else None,
        error=entry.error,
    )


def cell_view(session_id: str, cell: CellState) -> CellView:
    return CellView(
        index=cell.index,
        status=cell.status,
        prompt_history=list(cell.prompt_history),
        results=[_result_view(session_id, cell.index, r) for r in cell.results],
        imported_from=cell.imported_from,
    )


def session_view(session: SessionState) -> SessionView:
    return SessionView(
        id=session.id,
        caption=session.caption,
        object_prompt=session.object_prompt,
        status=session.status,
        error=session.error,
        reconstruction_psnr=session.reconstruction_psnr,
        source_url=f"/results/{session.id}/source.png",
        created_at=session.created_at,
        updated_at=session.updated_at,
        cells=[cell_view(session.id, c) for c in session.cells],
    )


def job_view(job: Job) -> JobView:
    return JobView(
        id=job.id,
        session_id=job.session_id,
        cell_index=job.cell_index,
        kind=job.kind,
        state=job.state,
        progress=job.progress,
        phase=job.phase,
        error=job.error,
        result_url=job.result_path,
    )
