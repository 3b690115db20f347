"""Data-extraction phase: deterministic latent inversion plus per-step
null-embedding optimization so the source reconstructs under guidance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import torch
from torch.optim import Adam

from .backbone import (
    Backbone,
    CLEAN_BOUNDARY,
    LatentImage,
    NoiseSchedule,
    TextEmbedding,
)
from .errors import InvalidArgumentError, NumericalFailureError

log = logging.getLogger(__name__)

ProgressFn = "callable[[int, int, str], None] | None"


def _notify(progress, step: int, total: int, phase: str) -> None:
    if progress is not None:
        progress(step, total, phase)


@dataclass
class NullOptOptions:
    inner_iters: int = 10
    learning_rate: float = 1e-2
    early_stop_tol: float = 1e-5


@dataclass(eq=False)
class LatentTrajectory:
    """latents[i] is the latent after i inversion steps; [0] is the clean
    encoding, [-1] the terminal noise latent."""

    latents: list[LatentImage]
    schedule: NoiseSchedule
    source_embedding: TextEmbedding

    def __post_init__(self):
        if len(self.latents) != self.schedule.num_inference_steps + 1:
            raise InvalidArgumentError(
                f"trajectory has {len(self.latents)} latents, expected "
                f"{self.schedule.num_inference_steps + 1}"
            )

    @property
    def terminal(self) -> LatentImage:
        return self.latents[-1]


@dataclass(eq=False)
class InversionRecord:
    trajectory: LatentTrajectory
    null_embeddings: list[TextEmbedding]
    guidance_scale: float
    reconstruction_psnr: float
    object_mask: "object | None" = None  # masks.ObjectMask, attached later
    caption: str = ""

    def __post_init__(self):
        steps = self.trajectory.schedule.num_inference_steps
        if len(self.null_embeddings) != steps:
            raise InvalidArgumentError(
                f"{len(self.null_embeddings)} null embeddings for {steps} steps"
            )


def ddim_step(
    latent: LatentImage,
    eps: torch.Tensor,
    t: int,
    t_next: int,
    schedule: NoiseSchedule,
) -> LatentImage:
    """Deterministic update between noise levels; works in both directions."""
    if eps.shape != latent.data.shape:
        raise InvalidArgumentError("eps shape does not match latent")
    data = _ddim_step_data(latent.data, eps, t, t_next, schedule)
    if not torch.isfinite(data).all():
        raise NumericalFailureError(f"ddim step {t}->{t_next} produced non-finite latent")
    return latent.with_data(data, timestep=t_next)


def _ddim_step_data(
    data: torch.Tensor, eps: torch.Tensor, t: int, t_next: int, schedule: NoiseSchedule
) -> torch.Tensor:
    """Autograd-friendly core of ddim_step (plain tensors in and out)."""
    a_t = schedule.alpha_bar(t)
    a_next = schedule.alpha_bar(t_next)
    if a_t <= 0.0:
        raise NumericalFailureError(f"alpha_bar({t}) is not positive")
    x0 = (data - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
    return math.sqrt(a_next) * x0 + math.sqrt(1.0 - a_next) * eps


def ddim_invert(
    source_latent: LatentImage,
    source_embedding: TextEmbedding,
    schedule: NoiseSchedule,
    backbone: Backbone,
    progress=None,
) -> LatentTrajectory:
    """Walk the clean source latent up to terminal noise (guidance scale 1:
    conditional prediction only). The predictor is evaluated at the upper
    timestep of each pair, matching the replay direction."""
    if source_latent.timestep not in (None, CLEAN_BOUNDARY):
        raise InvalidArgumentError("source latent must be a clean (t=0) encoding")
    latents = [source_latent.with_data(source_latent.data.clone(), timestep=CLEAN_BOUNDARY)]
    current = latents[0]
    ascending = schedule.ascending()
    total = len(ascending)
    with torch.no_grad():
        for i, t in enumerate(ascending):
            t_from = ascending[i - 1] if i > 0 else CLEAN_BOUNDARY
            try:
                eps = backbone.predict_noise(current, t, source_embedding)
                current = ddim_step(current, eps, t_from, t, schedule)
            except NumericalFailureError as err:
                raise NumericalFailureError(str(err), step=i) from err
            latents.append(current)
            _notify(progress, i + 1, total, "invert")
    return LatentTrajectory(latents=latents, schedule=schedule, source_embedding=source_embedding)


def _guided_eps(eps_c: torch.Tensor, eps_u: torch.Tensor, scale: float) -> torch.Tensor:
    return eps_u + scale * (eps_c - eps_u)


def optimize_null_embeddings(
    trajectory: LatentTrajectory,
    guidance_scale: float,
    backbone: Backbone,
    opts: NullOptOptions | None = None,
    source_image: torch.Tensor | None = None,
    progress=None,
    loss_log: list[list[float]] | None = None,
) -> tuple[list[TextEmbedding], float]:
    """Per-step optimization of the unconditional embedding, from the noisy
    end downward, so one guided step from the running latent matches the
    stored inversion latent. Returns the embeddings and the PSNR of the
    decoded reconstruction against ``source_image`` (or the decoded clean
    latent when no image is given)."""
    opts = opts or NullOptOptions()
    if guidance_scale < 1.0:
        raise InvalidArgumentError("guidance_scale must be >= 1")
    schedule = trajectory.schedule
    cond = trajectory.source_embedding
    steps = schedule.num_inference_steps
    null = backbone.encode_text("")
    uncond_data = null.embedding.clone()

    nulls: list[TextEmbedding] = []
    current = trajectory.terminal
    for i, t in enumerate(schedule.timesteps):
        t_next = schedule.prev_timestep(t)
        target = trajectory.latents[steps - 1 - i].data
        with torch.no_grad():
            eps_c = backbone.predict_noise(current, t, cond)

        best = uncond_data.clone()
        step_losses: list[float] = []
        if guidance_scale == 1.0:
            pass  # guided prediction ignores the null at scale 1
        else:
            param = uncond_data.clone().requires_grad_(True)
            optimizer = Adam([param], lr=opts.learning_rate)
            best_loss = float("inf")
            for _ in range(opts.inner_iters):
                uncond = replace(null, embedding=param)
                eps_u = backbone.predict_noise(current, t, uncond)
                eps = _guided_eps(eps_c, eps_u, guidance_scale)
                pred = _ddim_step_data(current.data, eps, t, t_next, schedule)
                loss = torch.nn.functional.mse_loss(pred, target)
                if not torch.isfinite(loss):
                    raise NumericalFailureError("null optimization loss is non-finite", step=i)
                if loss.item() < best_loss:
                    best_loss = loss.item()
                    best = param.detach().clone()
                step_losses.append(best_loss)
                if loss.item() < opts.early_stop_tol:
                    break
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

        if loss_log is not None:
            loss_log.append(step_losses)
        step_null = replace(null, embedding=best)
        nulls.append(step_null)
        with torch.no_grad():
            eps_u = backbone.predict_noise(current, t, step_null)
            eps = _guided_eps(eps_c, eps_u, guidance_scale)
            current = ddim_step(current, eps, t, t_next, schedule)
        uncond_data = best  # warm-start the next step
        _notify(progress, i + 1, steps, "null_opt")

    reconstruction = backbone.decode_latent(current)
    reference = source_image if source_image is not None else backbone.decode_latent(
        trajectory.latents[0]
    )
    return nulls, psnr(reconstruction, reference)


def reconstruct(record: InversionRecord, backbone: Backbone, progress=None) -> torch.Tensor:
    """Guided sampling from the terminal latent with the optimized nulls."""
    schedule = record.trajectory.schedule
    cond = record.trajectory.source_embedding
    current = record.trajectory.terminal
    total = schedule.num_inference_steps
    with torch.no_grad():
        for i, t in enumerate(schedule.timesteps):
            try:
                eps = backbone.guided_noise(
                    current, t, cond, record.null_embeddings[i], record.guidance_scale
                )
                current = ddim_step(current, eps, t, schedule.prev_timestep(t), schedule)
            except NumericalFailureError as err:
                raise NumericalFailureError(str(err), step=i) from err
            _notify(progress, i + 1, total, "reconstruct")
    return backbone.decode_latent(current)


def psnr(image: torch.Tensor, reference: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    mse = float(((image - reference) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def invert_image(
    image: torch.Tensor,
    caption: str,
    backbone: Backbone,
    num_inference_steps: int = 50,
    guidance_scale: float = 7.5,
    opts: NullOptOptions | None = None,
    progress=None,
) -> InversionRecord:
    """Full data-extraction pass for one source image (mask attached later)."""
    schedule = backbone.make_schedule(num_inference_steps)
    cond = backbone.encode_text(caption)
    source_latent = backbone.encode_image(image)
    trajectory = ddim_invert(source_latent, cond, schedule, backbone, progress=progress)
    nulls, rec_psnr = optimize_null_embeddings(
        trajectory, guidance_scale, backbone, opts=opts, source_image=image, progress=progress
    )
    log.info("inversion finished: reconstruction PSNR %.2f dB", rec_psnr)
    return InversionRecord(
        trajectory=trajectory,
        null_embeddings=nulls,
        guidance_scale=guidance_scale,
        reconstruction_psnr=rec_psnr,
        caption=caption,
    )
