import numpy as np
import pytest
import torch

from icontra.backbone import AttentionKind, AttentionSite, Branch, LatentImage
from icontra.errors import InternalError, InvalidArgumentError
from icontra.inversion import invert_image
from icontra.masks import MaskProvenance, ObjectMask, downsample_mask, extract_object_mask
from icontra.transfer import (
    AttentionControlConfig,
    EditRequest,
    blend_background,
    fade_weight,
    free_generation,
    guided_sample,
    mutual_attention,
    synthesize,
)

STEPS = 8

SMALL_CONFIG = dict(start_step=1, ramp_end_step=3, start_layer=0, blend_start_step=2)


@pytest.fixture(scope="module")
def record64(backbone64):
    image = torch.zeros(3, 64, 64)
    image[2] = 0.6
    image[0, 16:48, 16:48] = 0.9
    image[2, 16:48, 16:48] = 0.1
    image = image.clamp(0, 1)
    record = invert_image(image, "a red cube", backbone64, num_inference_steps=STEPS)
    record.object_mask = extract_object_mask(image, None)
    return record


def _site(layer=12, kind=AttentionKind.SELF, resolution=4):
    return AttentionSite(layer_index=layer, kind=kind, resolution=resolution,
                         branch=Branch.TARGET)


def test_fade_weight_piecewise():
    config = AttentionControlConfig(start_step=4, ramp_end_step=10, lambda_max=0.8)
    assert fade_weight(0, config) == 0.0
    assert fade_weight(3, config) == 0.0
    assert fade_weight(4, config) == 0.0
    assert fade_weight(7, config) == pytest.approx(0.8 * 3 / 6)
    assert fade_weight(10, config) == 0.8
    assert fade_weight(49, config) == 0.8


def test_fade_weight_degenerate_ramp():
    config = AttentionControlConfig(start_step=5, ramp_end_step=5, lambda_max=1.0)
    assert fade_weight(4, config) == 0.0
    assert fade_weight(5, config) == 1.0


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        AttentionControlConfig(start_step=10, ramp_end_step=5)
    with pytest.raises(InvalidArgumentError):
        AttentionControlConfig(lambda_max=1.5)
    with pytest.raises(InvalidArgumentError):
        EditRequest(target_prompt="")


def _qkv(seed=0, heads=2, n=16, d=8):
    gen = torch.Generator().manual_seed(seed)
    return [torch.randn(heads, n, d, generator=gen) for _ in range(6)]


def test_mutual_attention_zero_lambda_is_bitwise_no_op():
    q, k, v, ks, vs, raw = _qkv()
    config = AttentionControlConfig(start_step=4, ramp_end_step=10, lambda_max=0.0,
                                    start_layer=0)
    out = mutual_attention(_site(), q, k, v, ks, vs, raw, None, 20, config)
    assert out is raw


def test_mutual_attention_skips_early_layers():
    q, k, v, ks, vs, raw = _qkv(1)
    config = AttentionControlConfig(start_step=0, ramp_end_step=1, start_layer=10)
    out = mutual_attention(_site(layer=3), q, k, v, ks, vs, raw, None, 5, config)
    assert out is raw


def test_mutual_attention_shape_mismatch_is_internal_error():
    q, k, v, ks, vs, raw = _qkv(2)
    config = AttentionControlConfig(start_step=0, ramp_end_step=1, start_layer=0)
    with pytest.raises(InternalError):
        mutual_attention(_site(), q, k, v, ks[:, :8], vs, raw, None, 5, config)


def test_mutual_attention_mask_gating_pins_outside_queries():
    q, k, v, ks, vs, raw = _qkv(3)
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[:2] = 1  # first 8 flattened positions are inside
    config = AttentionControlConfig(start_step=0, ramp_end_step=1, start_layer=0,
                                    lambda_max=1.0, mask_gated=True)
    out = mutual_attention(_site(), q, k, v, ks, vs, raw, mask, 5, config)
    assert torch.equal(out[:, 8:], raw[:, 8:])  # outside the footprint: untouched
    assert not torch.equal(out[:, :8], raw[:, :8])


def test_mutual_attention_empty_mask_is_no_op():
    q, k, v, ks, vs, raw = _qkv(4)
    mask = np.zeros((4, 4), dtype=np.uint8)
    config = AttentionControlConfig(start_step=0, ramp_end_step=1, start_layer=0)
    out = mutual_attention(_site(), q, k, v, ks, vs, raw, mask, 5, config)
    assert out is raw


def test_mutual_attention_ungated_interpolates():
    q, k, v, ks, vs, raw = _qkv(5)
    config = AttentionControlConfig(start_step=0, ramp_end_step=4, start_layer=0,
                                    lambda_max=1.0, mask_gated=False)
    half = mutual_attention(_site(), q, k, v, ks, vs, raw, None, 2, config)
    full = mutual_attention(_site(), q, k, v, ks, vs, raw, None, 10, config)
    assert torch.allclose(half, 0.5 * raw + 0.5 * full, atol=1e-6)


def test_blend_background_pins_outside():
    gen = torch.Generator().manual_seed(6)
    zt = LatentImage(torch.randn(4, 8, 8, generator=gen), 64, 64, timestep=100)
    zs = LatentImage(torch.randn(4, 8, 8, generator=gen), 64, 64, timestep=100)
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:6, 2:6] = 1
    config = AttentionControlConfig(**SMALL_CONFIG)
    early = blend_background(zt, zs, mask, 0, config)
    assert early is zt  # before blend_start_step
    blended = blend_background(zt, zs, mask, 5, config)
    outside = torch.from_numpy(1 - mask).bool()
    assert torch.equal(blended.data[:, outside], zs.data[:, outside])
    inside = torch.from_numpy(mask).bool()
    assert torch.equal(blended.data[:, inside], zt.data[:, inside])


def test_blend_disabled_is_pass_through():
    zt = LatentImage(torch.zeros(4, 8, 8), 64, 64, timestep=100)
    zs = LatentImage(torch.ones(4, 8, 8), 64, 64, timestep=100)
    config = AttentionControlConfig(start_step=1, ramp_end_step=3, blend_start_step=None)
    assert blend_background(zt, zs, np.zeros((8, 8), np.uint8), 7, config) is zt


def test_synthesize_rejects_weak_record(record64, backbone64):
    request = EditRequest(target_prompt="a blue cube",
                          config=AttentionControlConfig(**SMALL_CONFIG))
    weak_psnr = record64.reconstruction_psnr
    try:
        record64.reconstruction_psnr = 10.0
        with pytest.raises(InvalidArgumentError):
            synthesize(record64, request, backbone64)
    finally:
        record64.reconstruction_psnr = weak_psnr


def test_synthesize_requires_mask(record64, backbone64):
    request = EditRequest(target_prompt="a blue cube",
                          config=AttentionControlConfig(**SMALL_CONFIG))
    mask = record64.object_mask
    try:
        record64.object_mask = None
        with pytest.raises(InvalidArgumentError):
            synthesize(record64, request, backbone64)
    finally:
        record64.object_mask = mask


def test_synthesize_rejects_ramp_past_schedule(record64, backbone64):
    config = AttentionControlConfig(start_step=1, ramp_end_step=STEPS, start_layer=0)
    with pytest.raises(InvalidArgumentError):
        synthesize(record64, EditRequest(target_prompt="x", config=config), backbone64)


def test_degenerate_config_matches_vanilla_sampler(record64, backbone64):
    config = AttentionControlConfig(start_step=1, ramp_end_step=3, start_layer=0,
                                    lambda_max=0.0, blend_start_step=None)
    request = EditRequest(target_prompt="a glass cube", config=config)
    result = synthesize(record64, request, backbone64)
    schedule = record64.trajectory.schedule
    cond = backbone64.encode_text("a glass cube")
    oracle = guided_sample(record64.trajectory.terminal, cond, record64.null_embeddings,
                           request.guidance_scale, schedule, backbone64)
    assert torch.equal(result.image, backbone64.decode_latent(oracle))


def test_synthesize_full_path_outputs(record64, backbone64):
    request = EditRequest(target_prompt="a carved wooden cube",
                          config=AttentionControlConfig(**SMALL_CONFIG))
    events = []
    result = synthesize(record64, request, backbone64,
                        progress=lambda s, n, p: events.append((s, n, p)))
    assert result.image.shape == (3, 64, 64)
    assert result.blend_mask is not None and result.blend_mask.shape == (8, 8)
    assert result.target_mask is not None
    assert result.config_echo["num_inference_steps"] == STEPS
    assert result.config_echo["guidance_scale"] == 7.5
    assert result.config_echo["freeze_step"] == max(1, STEPS // 5)
    assert [s for s, _, _ in events] == list(range(1, STEPS + 1))
    assert set(result.timings) >= {"source_branch", "target_branch", "decode"}


def test_synthesize_deterministic(record64, backbone64):
    request = EditRequest(target_prompt="a carved wooden cube",
                          config=AttentionControlConfig(**SMALL_CONFIG))
    a = synthesize(record64, request, backbone64)
    b = synthesize(record64, request, backbone64)
    assert torch.equal(a.image, b.image)


def test_free_generation_seeded(backbone64):
    a = free_generation(backbone64, "a teapot", seed=3, num_inference_steps=4, pixel_size=64)
    b = free_generation(backbone64, "a teapot", seed=3, num_inference_steps=4, pixel_size=64)
    c = free_generation(backbone64, "a teapot", seed=4, num_inference_steps=4, pixel_size=64)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
