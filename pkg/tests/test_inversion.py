import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from icontra.backbone import CLEAN_BOUNDARY, LatentImage, make_schedule
from icontra.errors import InvalidArgumentError, NumericalFailureError
from icontra.inversion import (
    InversionRecord,
    LatentTrajectory,
    NullOptOptions,
    ddim_invert,
    ddim_step,
    invert_image,
    optimize_null_embeddings,
    psnr,
    reconstruct,
)


def _walk(z, eps, schedule, up):
    """Chain ddim steps through the whole schedule in either direction."""
    pairs = list(zip((CLEAN_BOUNDARY,) + schedule.ascending(), schedule.ascending()))
    if not up:
        pairs = [(b, a) for a, b in reversed(pairs)]
    for t_from, t_to in pairs:
        z = ddim_step(z, eps, t_from, t_to, schedule)
    return z


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    steps=st.sampled_from([5, 10, 25, 50]),
)
def test_ddim_round_trip_identity(seed, steps):
    """Timestep-independent eps: inverting then sampling is the identity."""
    gen = torch.Generator().manual_seed(seed)
    schedule = make_schedule(steps)
    z0 = LatentImage(torch.randn(4, 8, 8, generator=gen), 64, 64, timestep=CLEAN_BOUNDARY)
    eps = torch.randn(4, 8, 8, generator=gen)
    up = _walk(z0, eps, schedule, up=True)
    back = _walk(up, eps, schedule, up=False)
    assert (back.data - z0.data).abs().max().item() <= 1e-5


def test_ddim_step_shape_mismatch():
    schedule = make_schedule(10)
    z = LatentImage(torch.zeros(4, 8, 8), 64, 64, timestep=CLEAN_BOUNDARY)
    with pytest.raises(InvalidArgumentError):
        ddim_step(z, torch.zeros(4, 4, 4), CLEAN_BOUNDARY, schedule.ascending()[0], schedule)


def test_ddim_step_non_finite_reports_failure():
    schedule = make_schedule(10)
    z = LatentImage(torch.zeros(4, 8, 8), 64, 64, timestep=CLEAN_BOUNDARY)
    bad_eps = torch.full((4, 8, 8), float("nan"))
    with pytest.raises(NumericalFailureError):
        ddim_step(z, bad_eps, CLEAN_BOUNDARY, schedule.ascending()[0], schedule)


def test_trajectory_length_validated(backbone64):
    schedule = make_schedule(10)
    cond = backbone64.encode_text("x")
    z = LatentImage(torch.zeros(4, 8, 8), 64, 64, timestep=CLEAN_BOUNDARY)
    with pytest.raises(InvalidArgumentError):
        LatentTrajectory(latents=[z] * 3, schedule=schedule, source_embedding=cond)


def _small_trajectory(backbone, steps=6, caption="a cup on a table"):
    image = torch.zeros(3, 64, 64)
    image[:, 20:44, 20:44] = torch.tensor([0.8, 0.3, 0.2])[:, None, None]
    image[0] += 0.1
    schedule = backbone.make_schedule(steps)
    cond = backbone.encode_text(caption)
    z0 = backbone.encode_image(image.clamp(0, 1))
    return image.clamp(0, 1), ddim_invert(z0, cond, schedule, backbone)


def test_invert_rejects_noisy_start(backbone64):
    schedule = backbone64.make_schedule(6)
    cond = backbone64.encode_text("x")
    z = LatentImage(torch.zeros(backbone64.latent_channels, 8, 8), 64, 64,
                    timestep=schedule.timesteps[0])
    with pytest.raises(InvalidArgumentError):
        ddim_invert(z, cond, schedule, backbone64)


def test_scale_one_keeps_initial_null(backbone64):
    _, trajectory = _small_trajectory(backbone64)
    nulls, _ = optimize_null_embeddings(trajectory, 1.0, backbone64)
    initial = backbone64.encode_text("")
    assert all(torch.equal(n.embedding, initial.embedding) for n in nulls)


def test_scale_below_one_rejected(backbone64):
    _, trajectory = _small_trajectory(backbone64)
    with pytest.raises(InvalidArgumentError):
        optimize_null_embeddings(trajectory, 0.5, backbone64)


def test_null_opt_best_loss_monotone(backbone64):
    _, trajectory = _small_trajectory(backbone64)
    loss_log: list[list[float]] = []
    optimize_null_embeddings(
        trajectory, 7.5, backbone64, opts=NullOptOptions(inner_iters=6), loss_log=loss_log
    )
    assert len(loss_log) == trajectory.schedule.num_inference_steps
    for step_losses in loss_log:
        assert step_losses == sorted(step_losses, reverse=True)


def test_null_opt_improves_over_plain_replay(backbone64):
    image, trajectory = _small_trajectory(backbone64)
    initial = backbone64.encode_text("")
    plain = InversionRecord(
        trajectory=trajectory,
        null_embeddings=[initial] * trajectory.schedule.num_inference_steps,
        guidance_scale=7.5,
        reconstruction_psnr=0.0,
    )
    plain_psnr = psnr(reconstruct(plain, backbone64), image)
    nulls, optimized_psnr = optimize_null_embeddings(
        trajectory, 7.5, backbone64, source_image=image
    )
    assert optimized_psnr > plain_psnr


def test_reconstruct_matches_reported_psnr(backbone64):
    image, trajectory = _small_trajectory(backbone64)
    nulls, reported = optimize_null_embeddings(trajectory, 7.5, backbone64, source_image=image)
    record = InversionRecord(
        trajectory=trajectory, null_embeddings=nulls, guidance_scale=7.5,
        reconstruction_psnr=reported,
    )
    assert psnr(reconstruct(record, backbone64), image) == pytest.approx(reported, abs=1e-6)


def test_invert_image_record_shape(backbone64):
    image = torch.zeros(3, 64, 64)
    image[1, 16:48, 16:48] = 0.7
    record = invert_image(image, "a green square", backbone64, num_inference_steps=5)
    assert len(record.trajectory.latents) == 6
    assert len(record.null_embeddings) == 5
    assert record.guidance_scale == 7.5
    assert record.caption == "a green square"


def test_progress_callback_phases(backbone64):
    image = torch.zeros(3, 64, 64)
    image[0, 10:50, 10:50] = 0.9
    events = []
    invert_image(image, "a red square", backbone64, num_inference_steps=4,
                 progress=lambda s, n, phase: events.append((s, n, phase)))
    phases = {p for _, _, p in events}
    assert phases == {"invert", "null_opt"}
    for phase in phases:
        steps = [s for s, _, p in events if p == phase]
        assert steps == sorted(steps)  # monotone progress
