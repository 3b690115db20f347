"""Engine interface the job worker drives; tests substitute an instrumented
fake, production wires the real pipeline."""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

from ..engine import ConceptTransferEngine, load_source_image
from ..persistence import load_image_png
from ..transfer import EditRequest


class JobEngine(Protocol):
    def run_extract(
        self, session_dir: Path, caption: str, object_prompt: str | None, progress
    ) -> float:
        """Read source.png, write record + mask into the session directory,
        return the reconstruction PSNR."""
        ...

    def run_generate(
        self,
        session_dir: Path,
        record_dir: Path,
        cell_index: int,
        ordinal: int,
        request: EditRequest,
        derive_from_image: Path | None,
        progress,
    ) -> Path:
        """Synthesize one result into cells/<k>/result_<n>.png. When
        ``derive_from_image`` is set and ``record_dir`` holds no record yet,
        re-invert that image first (extraction-on-import)."""
        ...


class PipelineJobEngine:
    """Real engine binding: inversion, masks and synthesis on the backbone."""

    def __init__(self, engine: ConceptTransferEngine):
        self.engine = engine

    def run_extract(self, session_dir, caption, object_prompt, progress):
        image = load_source_image(session_dir)
        record = self.engine.extract_to_dir(
            image, session_dir, caption=caption, object_prompt=object_prompt, progress=progress
        )
        return record.reconstruction_psnr

    def run_generate(self, session_dir, record_dir, cell_index, ordinal, request,
                     derive_from_image, progress):
        from ..persistence import record_exists

        if derive_from_image is not None and not record_exists(record_dir):
            image = load_image_png(derive_from_image)
            self.engine.extract_to_dir(
                image, record_dir, caption="", object_prompt=None, progress=progress
            )
        record = self.engine.load_record(record_dir)
        _, png_path = self.engine.synthesize_to_dir(
            record, request, session_dir, cell_index, ordinal, progress=progress
        )
        return png_path
