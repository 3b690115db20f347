"""Image-synthesis phase: dual-branch guided sampling where the target branch
receives faded-in source content through mask-gated mutual self-attention and
the background is pinned by latent blending."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .backbone import (
    AttentionKind,
    AttentionSite,
    Backbone,
    LatentImage,
    NoiseSchedule,
    TextEmbedding,
)
from .errors import InternalError, InvalidArgumentError, NumericalFailureError
from .inversion import InversionRecord, ddim_step, _notify
from .masks import (
    ObjectMask,
    TargetMask,
    aggregate_target_mask,
    blend_region,
    downsample_mask,
)

MASK_BIAS = -1e4
#: Reconstruction floor (dB) a record must meet before synthesis trusts it.
DEFAULT_PSNR_FLOOR = 25.0


@dataclass
class AttentionControlConfig:
    start_step: int = 4
    ramp_end_step: int = 10
    start_layer: int = 10
    lambda_max: float = 1.0
    mask_gated: bool = True
    #: First step with latent blending; None disables blending entirely.
    blend_start_step: int | None = 4

    def __post_init__(self):
        if not 0 <= self.start_step <= self.ramp_end_step:
            raise InvalidArgumentError("need 0 <= start_step <= ramp_end_step")
        if not 0.0 <= self.lambda_max <= 1.0:
            raise InvalidArgumentError("lambda_max must lie in [0, 1]")


@dataclass
class EditRequest:
    target_prompt: str
    config: AttentionControlConfig = field(default_factory=AttentionControlConfig)
    guidance_scale: float = 7.5
    seed: int = 0

    def __post_init__(self):
        if not self.target_prompt:
            raise InvalidArgumentError("target_prompt must not be empty")


@dataclass(eq=False)
class EditResult:
    image: torch.Tensor  # (3, H, W) in [0,1]
    target_mask: TargetMask | None
    blend_mask: np.ndarray | None  # latent-resolution binary editable region
    timings: dict[str, float]
    config_echo: dict


def fade_weight(step: int, config: AttentionControlConfig) -> float:
    """Piecewise-linear fade-in weight in [0, lambda_max]."""
    if step < config.start_step:
        return 0.0
    if step >= config.ramp_end_step:
        return config.lambda_max
    span = config.ramp_end_step - config.start_step
    return config.lambda_max * (step - config.start_step) / span


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if bias is not None:
        scores = scores + bias
    return scores.softmax(dim=-1) @ v


def mutual_attention(
    site: AttentionSite,
    q_t: torch.Tensor,
    k_t: torch.Tensor,
    v_t: torch.Tensor,
    k_s: torch.Tensor,
    v_s: torch.Tensor,
    raw_out: torch.Tensor,
    object_site_mask: np.ndarray | None,
    step: int,
    config: AttentionControlConfig,
) -> torch.Tensor:
    """Interpolate target self-attention with source-keyed attention.

    ``object_site_mask`` is the object footprint flattened to the site's
    token grid; with ``mask_gated`` set, queries inside it attend only to
    in-mask source positions and queries outside keep the target-only term.
    """
    if k_s.shape != k_t.shape or v_s.shape != v_t.shape:
        raise InternalError(f"branch desynchronization at {site}: source/target shapes differ")
    lam = fade_weight(step, config)
    if lam == 0.0 or site.layer_index < config.start_layer:
        return raw_out
    if config.mask_gated and object_site_mask is not None:
        inside = torch.from_numpy(object_site_mask.reshape(-1).astype(bool))
        if not inside.any():
            return raw_out
        bias = torch.where(
            inside, torch.zeros((), dtype=q_t.dtype), torch.full((), MASK_BIAS, dtype=q_t.dtype)
        )[None, None, :]
        source_term = _attend(q_t, k_s, v_s, bias=bias)
        lam_q = torch.where(inside, lam, 0.0).to(q_t.dtype)[None, :, None]
        return (1.0 - lam_q) * raw_out + lam_q * source_term
    return (1.0 - lam) * raw_out + lam * _attend(q_t, k_s, v_s)


def blend_background(
    z_t_target: LatentImage,
    z_t_source: LatentImage,
    blend_mask: np.ndarray,
    step: int,
    config: AttentionControlConfig,
) -> LatentImage:
    """Pin latent cells outside the editable region to the source branch."""
    if config.blend_start_step is None or step < config.blend_start_step:
        return z_t_target
    if z_t_target.data.shape != z_t_source.data.shape:
        raise InternalError("branch desynchronization: latent shapes differ in blend")
    m = torch.from_numpy(blend_mask.astype(np.float32))[None, :, :]
    data = m * z_t_target.data + (1.0 - m) * z_t_source.data
    return z_t_target.with_data(data, timestep=z_t_target.timestep)


class _PassTracker:
    """Detects traversal passes of a stateful controller: guidance runs the
    unconditional pass first, then the conditional pass."""

    def __init__(self, sites_per_pass: int):
        self.sites_per_pass = sites_per_pass
        self.visits = 0

    @property
    def pass_index(self) -> int:  # 0 = uncond, 1 = cond
        return (self.visits // self.sites_per_pass) % 2

    def advance(self):
        self.visits += 1


class SourceRecorder:
    """Pass-through controller that records K/V at every self-attention site."""

    def __init__(self, backbone: Backbone):
        self._tracker = _PassTracker(len(backbone.attention_sites))
        self.kv: dict[tuple[int, int], tuple[torch.Tensor, torch.Tensor]] = {}

    def begin_step(self):
        self._tracker.visits = 0
        self.kv.clear()

    def __call__(self, site, query, key, value, raw_out):
        if site.kind == AttentionKind.SELF:
            self.kv[(self._tracker.pass_index, site.layer_index)] = (key, value)
        self._tracker.advance()
        return raw_out


class TargetController:
    """Applies mutual attention on the target branch and harvests
    cross-attention maps for the target mask."""

    def __init__(
        self,
        backbone: Backbone,
        config: AttentionControlConfig,
        recorder: SourceRecorder,
        object_masks_by_res: dict[int, np.ndarray],
        harvest_resolution: int,
    ):
        self._tracker = _PassTracker(len(backbone.attention_sites))
        self.config = config
        self.recorder = recorder
        self.object_masks_by_res = object_masks_by_res
        self.harvest_resolution = harvest_resolution
        self.step = 0
        self.harvested: list[tuple[int, np.ndarray]] = []  # (step, maps)

    def begin_step(self, step: int):
        self._tracker.visits = 0
        self.step = step

    def __call__(self, site, query, key, value, raw_out):
        pass_index = self._tracker.pass_index
        self._tracker.advance()
        if site.kind == AttentionKind.CROSS:
            if pass_index == 1 and site.resolution == self.harvest_resolution:
                scores = query @ key.transpose(-1, -2) / math.sqrt(query.shape[-1])
                self.harvested.append((self.step, scores.softmax(dim=-1).numpy()))
            return raw_out
        recorded = self.recorder.kv.get((pass_index, site.layer_index))
        if recorded is None:
            raise InternalError(f"branch desynchronization: no source K/V for {site}")
        k_s, v_s = recorded
        return mutual_attention(
            site,
            query,
            key,
            value,
            k_s,
            v_s,
            raw_out,
            self.object_masks_by_res.get(site.resolution),
            self.step,
            self.config,
        )


def guided_sample(
    z_terminal: LatentImage,
    cond: TextEmbedding,
    nulls: list[TextEmbedding],
    guidance_scale: float,
    schedule: NoiseSchedule,
    backbone: Backbone,
) -> LatentImage:
    """Vanilla guided sampling from a terminal latent (the oracle the
    degenerate synthesize configuration must match bitwise)."""
    current = z_terminal
    with torch.no_grad():
        for i, t in enumerate(schedule.timesteps):
            eps = backbone.guided_noise(current, t, cond, nulls[i], guidance_scale)
            current = ddim_step(current, eps, t, schedule.prev_timestep(t), schedule)
    return current


def free_generation(
    backbone: Backbone,
    prompt: str,
    seed: int,
    num_inference_steps: int = 50,
    guidance_scale: float = 7.5,
    pixel_size: int = 512,
) -> torch.Tensor:
    """Escape hatch: plain text-to-image from seeded noise, no inversion."""
    schedule = backbone.make_schedule(num_inference_steps)
    side = pixel_size // 8
    gen = torch.Generator().manual_seed(seed)
    z = LatentImage(
        torch.randn(backbone.latent_channels, side, side, generator=gen),
        pixel_size,
        pixel_size,
        timestep=schedule.timesteps[0],
    )
    cond = backbone.encode_text(prompt)
    nulls = [backbone.encode_text("")] * num_inference_steps
    return backbone.decode_latent(guided_sample(z, cond, nulls, guidance_scale, schedule, backbone))


def _content_token_indices(cond: TextEmbedding, backbone: Backbone) -> list[int]:
    null_tokens = backbone.encode_text("").tokens
    indices = [i for i, tok in enumerate(cond.tokens) if tok != null_tokens[i]]
    return indices or list(range(len(cond.tokens)))


def synthesize(
    record: InversionRecord,
    request: EditRequest,
    backbone: Backbone,
    psnr_floor: float = DEFAULT_PSNR_FLOOR,
    progress=None,
) -> EditResult:
    """Run the two synchronized guided branches from the inverted terminal
    latent and decode the edited target latent.

    The editable region is frozen once the cross-attention harvest window
    opens (20% into denoising); blending is applied from
    ``max(blend_start_step, freeze step)`` onward.
    """
    schedule = record.trajectory.schedule
    steps = schedule.num_inference_steps
    config = request.config
    if record.reconstruction_psnr < psnr_floor:
        raise InvalidArgumentError(
            f"inversion record is unusable: reconstruction PSNR "
            f"{record.reconstruction_psnr:.2f} dB below the {psnr_floor} dB floor"
        )
    if config.ramp_end_step >= steps:
        raise InvalidArgumentError("ramp_end_step must be below num_inference_steps")
    if not isinstance(record.object_mask, ObjectMask):
        raise InvalidArgumentError("record has no object mask attached")

    latent_side = record.trajectory.terminal.data.shape[-1]
    freeze_step = max(1, steps // 5)  # harvest window opens 20% in
    harvest_res = latent_side // 4
    object_mask = record.object_mask
    site_resolutions = sorted(
        {s.resolution for s in backbone.attention_sites if s.kind == AttentionKind.SELF}
    )
    masks_by_res = {
        res: downsample_mask(object_mask.pixel_mask, res) for res in site_resolutions
    }

    cond_target = backbone.encode_text(request.target_prompt)
    cond_source = record.trajectory.source_embedding
    recorder = SourceRecorder(backbone)
    controller = TargetController(
        backbone, config, recorder, masks_by_res, harvest_res
    )

    z_s = record.trajectory.terminal
    z_t = record.trajectory.terminal
    target_mask: TargetMask | None = None
    blend_mask: np.ndarray | None = None
    token_indices = _content_token_indices(cond_target, backbone)
    timings = {"source_branch": 0.0, "target_branch": 0.0, "decode": 0.0}

    with torch.no_grad():
        for i, t in enumerate(schedule.timesteps):
            if z_s.timestep != z_t.timestep:
                raise InternalError("branch desynchronization: timesteps diverged")
            t_next = schedule.prev_timestep(t)
            try:
                t0 = time.perf_counter()
                recorder.begin_step()
                eps_s = backbone.guided_noise(
                    z_s, t, cond_source, record.null_embeddings[i],
                    record.guidance_scale, controller=recorder,
                )
                z_s = ddim_step(z_s, eps_s, t, t_next, schedule)
                t1 = time.perf_counter()
                controller.begin_step(i)
                eps_t = backbone.guided_noise(
                    z_t, t, cond_target, record.null_embeddings[i],
                    request.guidance_scale, controller=controller,
                )
                z_t = ddim_step(z_t, eps_t, t, t_next, schedule)
                timings["source_branch"] += t1 - t0
                timings["target_branch"] += time.perf_counter() - t1
            except NumericalFailureError as err:
                raise NumericalFailureError(str(err), step=i) from err

            if i + 1 == freeze_step:
                early = [m for s, m in controller.harvested if s < freeze_step]
                if early:
                    provisional = aggregate_target_mask(early, token_indices)
                else:
                    provisional = None
                blend_mask = blend_region(object_mask, provisional, latent_side,
                                          radius=object_mask.dilation_radius)
            if blend_mask is not None and config.blend_start_step is not None:
                z_t = blend_background(z_t, z_s, blend_mask, i, config)
                outside = torch.from_numpy(1 - blend_mask).bool()
                if i >= config.blend_start_step and not torch.equal(
                    z_t.data[:, outside], z_s.data[:, outside]
                ):
                    raise InternalError("background pinning violated outside blend region")
            _notify(progress, i + 1, steps, "synthesize")

        late = [m for s, m in controller.harvested if s >= freeze_step]
        if late:
            target_mask = aggregate_target_mask(late, token_indices)
        t0 = time.perf_counter()
        image = backbone.decode_latent(z_t)
        timings["decode"] = time.perf_counter() - t0

    echo = {
        "target_prompt": request.target_prompt,
        "guidance_scale": request.guidance_scale,
        "seed": request.seed,
        "num_inference_steps": steps,
        "config": asdict(config),
        "freeze_step": freeze_step,
        "harvest_resolution": harvest_res,
        "psnr_floor": psnr_floor,
        "caption": record.caption,
    }
    return EditResult(
        image=image,
        target_mask=target_mask,
        blend_mask=blend_mask,
        timings=timings,
        config_echo=echo,
    )
