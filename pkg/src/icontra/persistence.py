"""On-disk layout shared by the service and the CLI.

Session directory tree::

    <session>/
      session.json            # session manifest (atomic-replace updates)
      source.png              # letterboxed source at working resolution
      mask.png                # 1-bit object mask
      record/
        trajectory.bin        # latent trajectory, binary (header + f32 LE)
        nulls.bin             # optimized null embeddings, same container
        record.json           # guidance scale, psnr, schedule, caption
      cells/<k>/
        result_<n>.png
        result_<n>.json       # resolved config, timings, psnr checks, masks
        record/ ...           # derived record after an import

Binary container: magic ``ICTR``, version u16, array count u16, then four
u32 dims (little-endian), followed by count x prod(dims) float32 values in
C order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import Backbone, CLEAN_BOUNDARY, LatentImage, make_schedule
from .errors import InvalidArgumentError
from .inversion import InversionRecord, LatentTrajectory
from .masks import MaskProvenance, ObjectMask, downsample_mask

MAGIC = b"ICTR"
FORMAT_VERSION = 1

SESSION_MANIFEST = "session.json"
SOURCE_IMAGE = "source.png"
MASK_IMAGE = "mask.png"
RECORD_DIR = "record"
TRAJECTORY_BIN = "trajectory.bin"
NULLS_BIN = "nulls.bin"
RECORD_MANIFEST = "record.json"
CELLS_DIR = "cells"


def atomic_write_json(path: Path, payload: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_array_file(path: Path, arrays: list[np.ndarray]) -> None:
    if not arrays:
        raise InvalidArgumentError("nothing to write")
    shape = arrays[0].shape
    dims = list(shape) + [1] * (4 - len(shape))
    if len(dims) != 4 or any(a.shape != shape for a in arrays):
        raise InvalidArgumentError("arrays must share one shape with <= 4 dims")
    header = MAGIC + struct.pack("<HH4I", FORMAT_VERSION, len(arrays), *dims)
    with open(path, "wb") as fh:
        fh.write(header)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_array_file(path: Path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.read(24)
        if len(header) != 24 or header[:4] != MAGIC:
            raise InvalidArgumentError(f"{path} is not a latent container")
        version, count, *dims = struct.unpack("<HH4I", header[4:])
        if version != FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported container version {version}")
        shape = tuple(d for d in dims if d != 1) or (1,)
        n = int(np.prod(dims))
        arrays = []
        for _ in range(count):
            buf = fh.read(4 * n)
            if len(buf) != 4 * n:
                raise InvalidArgumentError(f"{path} is truncated")
            arrays.append(np.frombuffer(buf, dtype="<f4").reshape(shape).copy())
    return arrays


def save_mask(path: Path, mask: ObjectMask) -> None:
    Image.fromarray((mask.pixel_mask * 255).astype(np.uint8), mode="L").convert("1").save(path)


def load_mask(path: Path, provenance: str, dilation_radius: int, latent_resolution: int) -> ObjectMask:
    pixel = (np.array(Image.open(path).convert("L")) > 127).astype(np.uint8)
    return ObjectMask(
        pixel_mask=pixel,
        latent_mask=downsample_mask(pixel, latent_resolution),
        provenance=MaskProvenance(provenance),
        dilation_radius=dilation_radius,
    )


def save_inversion_record(session_dir: Path, record: InversionRecord) -> None:
    record_dir = session_dir / RECORD_DIR
    record_dir.mkdir(parents=True, exist_ok=True)
    traj = record.trajectory
    write_array_file(record_dir / TRAJECTORY_BIN, [z.data.numpy() for z in traj.latents])
    write_array_file(record_dir / NULLS_BIN, [e.embedding.numpy() for e in record.null_embeddings])
    manifest = {
        "format_version": FORMAT_VERSION,
        "guidance_scale": record.guidance_scale,
        "reconstruction_psnr": record.reconstruction_psnr,
        "caption": record.caption,
        "num_inference_steps": traj.schedule.num_inference_steps,
        "train_steps": traj.schedule.train_steps,
        "pixel_height": traj.latents[0].pixel_height,
        "pixel_width": traj.latents[0].pixel_width,
    }
    if isinstance(record.object_mask, ObjectMask):
        save_mask(session_dir / MASK_IMAGE, record.object_mask)
        manifest["object_mask"] = {
            "file": MASK_IMAGE,
            "provenance": record.object_mask.provenance.value,
            "dilation_radius": record.object_mask.dilation_radius,
        }
    atomic_write_json(record_dir / RECORD_MANIFEST, manifest)


def load_inversion_record(session_dir: Path, backbone: Backbone) -> InversionRecord:
    record_dir = session_dir / RECORD_DIR
    with open(record_dir / RECORD_MANIFEST) as fh:
        manifest = json.load(fh)
    schedule = make_schedule(manifest["num_inference_steps"], manifest["train_steps"])
    caption = manifest["caption"]
    source_embedding = backbone.encode_text(caption)
    ph, pw = manifest["pixel_height"], manifest["pixel_width"]
    latents = [
        LatentImage(torch.from_numpy(a), ph, pw,
                    timestep=CLEAN_BOUNDARY if i == 0 else schedule.ascending()[i - 1])
        for i, a in enumerate(read_array_file(record_dir / TRAJECTORY_BIN))
    ]
    trajectory = LatentTrajectory(latents=latents, schedule=schedule, source_embedding=source_embedding)
    null = backbone.encode_text("")
    nulls = [
        type(null)(tokens=null.tokens, embedding=torch.from_numpy(a), prompt_text="", is_null=True)
        for a in read_array_file(record_dir / NULLS_BIN)
    ]
    mask = None
    if "object_mask" in manifest:
        info = manifest["object_mask"]
        mask = load_mask(
            session_dir / info["file"], info["provenance"], info["dilation_radius"],
            latent_resolution=latents[0].data.shape[-1],
        )
    return InversionRecord(
        trajectory=trajectory,
        null_embeddings=nulls,
        guidance_scale=manifest["guidance_scale"],
        reconstruction_psnr=manifest["reconstruction_psnr"],
        object_mask=mask,
        caption=caption,
    )


def record_exists(session_dir: Path) -> bool:
    record_dir = session_dir / RECORD_DIR
    return all(
        (record_dir / name).exists() for name in (TRAJECTORY_BIN, NULLS_BIN, RECORD_MANIFEST)
    )


def save_image_png(path: Path, image: torch.Tensor) -> None:
    arr = (image.clamp(0, 1).permute(1, 2, 0).numpy() * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_image_png(path: Path) -> torch.Tensor:
    arr = np.array(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def cell_dir(session_dir: Path, index: int) -> Path:
    return session_dir / CELLS_DIR / str(index)


def result_paths(session_dir: Path, index: int, ordinal: int) -> tuple[Path, Path]:
    base = cell_dir(session_dir, index)
    return base / f"result_{ordinal}.png", base / f"result_{ordinal}.json"
