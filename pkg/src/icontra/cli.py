"""Batch command line: headless inversion, editing and metrics over the same
session directories the service uses.

Exit codes: 0 success, 2 input error, 3 pipeline error, 4 check failure.
"""

from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
from PIL import Image

from .engine import ConceptTransferEngine, EngineConfig, letterbox
from .errors import IcontraError, InvalidArgumentError
from .inversion import NullOptOptions
from .persistence import (
    MASK_IMAGE,
    RECORD_DIR,
    RECORD_MANIFEST,
    SESSION_MANIFEST,
    atomic_write_json,
    cell_dir,
)
from .service.store import SessionState
from .transfer import AttentionControlConfig, EditRequest

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3
EXIT_CHECK = 4

LOCK_FILE = ".icontra.lock"


def _check_service_lock(session_dir: Path) -> None:
    """Refuse to touch a data dir that a running service holds."""
    for candidate in (session_dir, session_dir.parent, session_dir.parent.parent):
        lock = candidate / LOCK_FILE
        if not lock.exists():
            continue
        try:
            pid = int(lock.read_text().strip())
            os.kill(pid, 0)
        except (ValueError, ProcessLookupError, PermissionError):
            continue  # stale or unreadable lock
        raise InvalidArgumentError(
            f"data dir is locked by a running service (pid {pid}); stop it first"
        )


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _engine(model_path: str | None, steps: int, psnr_floor: float = 25.0) -> ConceptTransferEngine:
    return ConceptTransferEngine(
        EngineConfig(model_path=model_path, num_inference_steps=steps, psnr_floor=psnr_floor,
                     null_opt=NullOptOptions())
    )


def _progress_printer(label: str):
    def progress(step: int, total: int, phase: str):
        click.echo(f"\r{label}: {phase} {step}/{total}", nl=False, err=True)
    return progress


@click.group()
def main():
    """Concept-transfer toolkit: invert a photo once, then synthesize
    prompt-driven variations that keep its design and background."""


@main.command()
@click.argument("image", type=click.Path(path_type=Path))
@click.option("--caption", default="", help="Source caption used for inversion.")
@click.option("--object-prompt", default=None, help="Text prompt for object mask extraction.")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path),
              help="Session directory to create.")
@click.option("--steps", default=50, show_default=True, help="Inference steps.")
@click.option("--model-path", default=None, help="Backbone checkpoint path.")
def invert(image, caption, object_prompt, out_dir, steps, model_path):
    """Run the extraction phase on IMAGE and write a session directory."""
    if not image.exists():
        _fail(f"no such image file: {image}", EXIT_INPUT)
    try:
        pil = Image.open(image)
        pil.load()
    except Exception:
        _fail(f"could not decode image file: {image}", EXIT_INPUT)
    try:
        _check_service_lock(out_dir)
        engine = _engine(model_path, steps)
        source = letterbox(pil)
        t0 = time.time()
        record = engine.extract_to_dir(
            source, out_dir, caption=caption, object_prompt=object_prompt,
            progress=_progress_printer("invert"),
        )
        click.echo(err=True)
        session = SessionState(id=out_dir.name, caption=caption, object_prompt=object_prompt,
                               status="ready", reconstruction_psnr=record.reconstruction_psnr)
        atomic_write_json(out_dir / SESSION_MANIFEST, asdict(session))
        click.echo(f"session: {out_dir}")
        click.echo(f"reconstruction_psnr: {record.reconstruction_psnr:.2f} dB")
        click.echo(f"elapsed: {time.time() - t0:.1f} s")
    except IcontraError as err:
        _fail(str(err), EXIT_INPUT if isinstance(err, InvalidArgumentError) else EXIT_PIPELINE)


def _next_ordinal(session_dir: Path, cell: int) -> int:
    base = cell_dir(session_dir, cell)
    n = 0
    while (base / f"result_{n}.png").exists():
        n += 1
    return n


@main.command()
@click.argument("session_dir", type=click.Path(path_type=Path))
@click.argument("prompt")
@click.option("--cell", default=0, show_default=True, help="Cell index for the result bundle.")
@click.option("--guidance", default=7.5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--start-step", default=None, type=int)
@click.option("--ramp-end-step", default=None, type=int)
@click.option("--start-layer", default=None, type=int)
@click.option("--lambda-max", default=None, type=float)
@click.option("--mask-gate/--no-mask-gate", default=True, show_default=True)
@click.option("--blend-start-step", default=None, type=int)
@click.option("--no-blend", is_flag=True, help="Disable latent background blending.")
@click.option("--degenerate", is_flag=True,
              help="Force lambda to 0 and disable blending (vanilla-sampler oracle).")
@click.option("--check", "check_", is_flag=True,
              help="Exit 4 unless result PSNR vs reconstruction meets the floor.")
@click.option("--psnr-floor", default=25.0, show_default=True,
              help="Floor for --check (result vs reconstruction).")
@click.option("--record-floor", default=25.0, show_default=True,
              help="Reconstruction quality a record must meet to be usable.")
@click.option("--model-path", default=None)
def edit(session_dir, prompt, cell, guidance, seed, start_step, ramp_end_step, start_layer,
         lambda_max, mask_gate, blend_start_step, no_blend, degenerate, check_, psnr_floor,
         record_floor, model_path):
    """Synthesize PROMPT against an inverted session and write a result bundle."""
    if not (session_dir / RECORD_DIR / RECORD_MANIFEST).exists():
        _fail(f"no inversion record under {session_dir}", EXIT_INPUT)
    defaults = AttentionControlConfig()
    if degenerate:
        lambda_max, no_blend = 0.0, True
    config = AttentionControlConfig(
        start_step=start_step if start_step is not None else defaults.start_step,
        ramp_end_step=ramp_end_step if ramp_end_step is not None else defaults.ramp_end_step,
        start_layer=start_layer if start_layer is not None else defaults.start_layer,
        lambda_max=lambda_max if lambda_max is not None else defaults.lambda_max,
        mask_gated=mask_gate,
        blend_start_step=None if no_blend else (
            blend_start_step if blend_start_step is not None else defaults.blend_start_step
        ),
    )
    request = EditRequest(target_prompt=prompt, config=config, guidance_scale=guidance, seed=seed)
    try:
        _check_service_lock(session_dir)
        engine = _engine(model_path, 50, psnr_floor=record_floor)
        record = engine.load_record(session_dir)
        steps = record.trajectory.schedule.num_inference_steps
        click.echo(f"steps: {steps}  guidance: {guidance}")
        ordinal = _next_ordinal(session_dir, cell)
        result, png_path = engine.synthesize_to_dir(
            record, request, session_dir, cell, ordinal, progress=_progress_printer("edit")
        )
        click.echo(err=True)
        recon = engine.reconstruction_image(record)
        result_psnr = float(
            -10.0 * np.log10(max(float(((result.image - recon) ** 2).mean()), 1e-12))
        )
        click.echo(f"result: {png_path}")
        click.echo(f"psnr_vs_reconstruction: {result_psnr:.2f} dB")
        if check_ and result_psnr < psnr_floor:
            _fail(f"psnr {result_psnr:.2f} below floor {psnr_floor}", EXIT_CHECK)
    except IcontraError as err:
        _fail(str(err), EXIT_PIPELINE)


@main.command()
@click.argument("session_dir", type=click.Path(path_type=Path))
@click.option("--tolerance", default=0.02, show_default=True,
              help="Background mean-abs-diff tolerance for the pass flag.")
def metrics(session_dir, tolerance):
    """Report reconstruction PSNR, per-result background diffs and mask areas."""
    manifest_path = session_dir / RECORD_DIR / RECORD_MANIFEST
    if not manifest_path.exists():
        _fail(f"no inversion record under {session_dir}", EXIT_INPUT)
    with open(manifest_path) as fh:
        record_manifest = json.load(fh)
    report: dict = {
        "session": str(session_dir),
        "reconstruction_psnr": record_manifest["reconstruction_psnr"],
        "results": [],
    }
    mask_path = session_dir / MASK_IMAGE
    if mask_path.exists():
        mask = np.array(Image.open(mask_path).convert("L")) > 127
        report["object_mask_area"] = float(mask.mean())
    for result_manifest in sorted(session_dir.glob("cells/*/result_*.json")):
        with open(result_manifest) as fh:
            payload = json.load(fh)
        checks = payload.get("checks", {})
        entry = {
            "result": str(result_manifest.relative_to(session_dir)),
            "background_mean_abs_diff": checks.get("background_mean_abs_diff"),
            "blend_area_fraction": checks.get("blend_area_fraction"),
            "target_mask_area": payload.get("target_mask_area"),
        }
        diff = checks.get("background_mean_abs_diff")
        if diff is not None:
            entry["background_ok"] = bool(diff <= tolerance)
        report["results"].append(entry)
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.argument("manifest", type=click.Path(path_type=Path))
@click.option("--out", "out_dir", default=None, type=click.Path(path_type=Path),
              help="Overrides the manifest's output directory.")
@click.option("--steps", default=50, show_default=True)
@click.option("--record-floor", default=25.0, show_default=True,
              help="Reconstruction quality a record must meet to be usable.")
@click.option("--model-path", default=None)
@click.pass_context
def batch(ctx, manifest, out_dir, steps, record_floor, model_path):
    """Invert and edit every entry of a JSON batch MANIFEST."""
    if not manifest.exists():
        _fail(f"no such manifest: {manifest}", EXIT_INPUT)
    with open(manifest) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            _fail(f"manifest is not valid JSON: {err}", EXIT_INPUT)
    out_root = Path(out_dir or payload.get("output_dir") or "batch_out")
    entries = payload.get("entries", [])
    if not entries:
        _fail("manifest has no entries", EXIT_INPUT)
    for entry in entries:
        image = Path(entry["image"])
        if not image.exists():
            _fail(f"no such image file: {image}", EXIT_INPUT)
        for prompt in entry.get("prompts", []):
            if not str(prompt).strip():
                _fail(f"empty prompt in entry for {image}", EXIT_INPUT)
    try:
        engine = _engine(model_path, steps, psnr_floor=record_floor)
        for entry in entries:
            image = Path(entry["image"])
            session_dir = out_root / image.stem
            _check_service_lock(session_dir)
            click.echo(f"== {image} -> {session_dir}")
            source = letterbox(Image.open(image))
            record = engine.extract_to_dir(
                source, session_dir, caption=entry.get("caption", ""),
                object_prompt=entry.get("object_prompt"),
                progress=_progress_printer("invert"),
            )
            click.echo(err=True)
            session = SessionState(id=session_dir.name, caption=entry.get("caption", ""),
                                   object_prompt=entry.get("object_prompt"), status="ready",
                                   reconstruction_psnr=record.reconstruction_psnr)
            atomic_write_json(session_dir / SESSION_MANIFEST, asdict(session))
            overrides = entry.get("config", {})
            defaults = AttentionControlConfig()
            config = AttentionControlConfig(**{**asdict(defaults), **overrides})
            for ordinal, prompt in enumerate(entry.get("prompts", [])):
                request = EditRequest(target_prompt=prompt, config=config,
                                      guidance_scale=entry.get("guidance_scale", 7.5))
                _, png_path = engine.synthesize_to_dir(
                    record, request, session_dir, 0, ordinal,
                    progress=_progress_printer("edit"),
                )
                click.echo(err=True)
                click.echo(f"  [{ordinal}] {prompt!r} -> {png_path}")
    except IcontraError as err:
        _fail(str(err), EXIT_PIPELINE)


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", default=None, help="Session data directory (ICONTRA_DATA_DIR).")
@click.option("--model-path", default=None, help="Backbone checkpoint (ICONTRA_MODEL_PATH).")
def serve(port, host, data_dir, model_path):
    """Run the REST session service."""
    import uvicorn

    from .service import create_app
    from .service.app import DATA_DIR_ENV

    data_dir = Path(data_dir or os.environ.get(DATA_DIR_ENV, "icontra_data"))
    data_dir.mkdir(parents=True, exist_ok=True)
    lock = data_dir / LOCK_FILE
    lock.write_text(str(os.getpid()))
    try:
        app = create_app(data_dir=data_dir, model_path=model_path)
        uvicorn.run(app, host=host, port=port)
    finally:
        lock.unlink(missing_ok=True)


if __name__ == "__main__":
    main()
