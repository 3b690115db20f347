"""High-level pipeline driver: one object owning the backbone, exposing the
extraction and synthesis passes the service and the CLI run."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import Backbone, load_backbone
from .errors import InvalidArgumentError
from .inversion import InversionRecord, NullOptOptions, invert_image, psnr, reconstruct
from .masks import dilate_mask, extract_object_mask
from .persistence import (
    SOURCE_IMAGE,
    atomic_write_json,
    load_image_png,
    load_inversion_record,
    result_paths,
    save_image_png,
    save_inversion_record,
)
from .transfer import DEFAULT_PSNR_FLOOR, EditRequest, EditResult, synthesize

WORKING_RESOLUTION = 512


@dataclass
class EngineConfig:
    model_path: str | None = None
    num_inference_steps: int = 50
    guidance_scale: float = 7.5
    psnr_floor: float = DEFAULT_PSNR_FLOOR
    null_opt: NullOptOptions = field(default_factory=NullOptOptions)


def letterbox(image: Image.Image, size: int = WORKING_RESOLUTION) -> torch.Tensor:
    """Aspect-preserving resize onto a neutral-gray square canvas."""
    image = image.convert("RGB")
    scale = size / max(image.width, image.height)
    w, h = max(1, round(image.width * scale)), max(1, round(image.height * scale))
    resized = image.resize((w, h), Image.LANCZOS)
    canvas = Image.new("RGB", (size, size), (128, 128, 128))
    canvas.paste(resized, ((size - w) // 2, (size - h) // 2))
    arr = np.array(canvas, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


class ConceptTransferEngine:
    """Serial pipeline driver; callers serialize access (one job at a time)."""

    def __init__(self, config: EngineConfig | None = None, backbone: Backbone | None = None):
        self.config = config or EngineConfig()
        self.backbone = backbone or load_backbone(
            self.config.model_path, working_resolution=WORKING_RESOLUTION
        )

    def extract(
        self,
        image: torch.Tensor,
        caption: str = "",
        object_prompt: str | None = None,
        progress=None,
    ) -> InversionRecord:
        """Data-extraction pass: object mask, inversion, null optimization."""
        record = invert_image(
            image,
            caption,
            self.backbone,
            num_inference_steps=self.config.num_inference_steps,
            guidance_scale=self.config.guidance_scale,
            opts=self.config.null_opt,
            progress=progress,
        )
        record.object_mask = extract_object_mask(image, object_prompt)
        return record

    def extract_to_dir(
        self,
        image: torch.Tensor,
        session_dir: Path,
        caption: str = "",
        object_prompt: str | None = None,
        progress=None,
    ) -> InversionRecord:
        session_dir.mkdir(parents=True, exist_ok=True)
        save_image_png(session_dir / SOURCE_IMAGE, image)
        record = self.extract(image, caption, object_prompt, progress=progress)
        save_inversion_record(session_dir, record)
        return record

    def load_record(self, session_dir: Path) -> InversionRecord:
        return load_inversion_record(session_dir, self.backbone)

    def synthesize(self, record: InversionRecord, request: EditRequest, progress=None) -> EditResult:
        return synthesize(
            record, request, self.backbone, psnr_floor=self.config.psnr_floor, progress=progress
        )

    def synthesize_to_dir(
        self,
        record: InversionRecord,
        request: EditRequest,
        session_dir: Path,
        cell_index: int,
        ordinal: int,
        progress=None,
    ) -> tuple[EditResult, Path]:
        result = self.synthesize(record, request, progress=progress)
        png_path, manifest_path = result_paths(session_dir, cell_index, ordinal)
        png_path.parent.mkdir(parents=True, exist_ok=True)
        save_image_png(png_path, result.image)
        checks = self.result_checks(record, result)
        atomic_write_json(
            manifest_path,
            {
                "config": result.config_echo,
                "timings": result.timings,
                "checks": checks,
                "image": png_path.name,
                "blend_mask": None if result.blend_mask is None else result.blend_mask.tolist(),
                "target_mask_area": (
                    None if result.target_mask is None else float(result.target_mask.binary.mean())
                ),
            },
        )
        return result, png_path

    def result_checks(self, record: InversionRecord, result: EditResult) -> dict:
        """Background-preservation metrics against the source reconstruction."""
        checks: dict = {"reconstruction_psnr": record.reconstruction_psnr}
        blending_on = result.config_echo["config"].get("blend_start_step") is not None
        if result.blend_mask is not None and blending_on:
            recon = reconstruct(record, self.backbone)
            side = result.blend_mask.shape[0]
            factor = result.image.shape[-1] // side
            pixel_blend = np.kron(result.blend_mask, np.ones((factor, factor), dtype=np.uint8))
            outside = dilate_mask(pixel_blend, factor) == 0
            if outside.any():
                diff = (result.image - recon).abs().numpy()
                checks["background_mean_abs_diff"] = float(diff[:, outside].mean())
                checks["blend_area_fraction"] = float(result.blend_mask.mean())
        return checks

    def reconstruction_image(self, record: InversionRecord) -> torch.Tensor:
        return reconstruct(record, self.backbone)


def load_source_image(session_dir: Path) -> torch.Tensor:
    path = session_dir / SOURCE_IMAGE
    if not path.exists():
        raise InvalidArgumentError(f"no source image at {path}")
    return load_image_png(path)


def image_psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    return psnr(a, b)
