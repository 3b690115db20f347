"""Object masks of the source image and target masks harvested from
cross-attention, plus the fusion rule that yields the blend region."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from scipy import ndimage

from .errors import EmptyMaskError, InvalidArgumentError

DEFAULT_MIN_AREA = 0.005  # fraction of pixels a valid object mask must cover
SMALL_COMPONENT_AREA = 0.001
DEFAULT_TARGET_THRESHOLD = 0.3
BLEND_DILATION_RADIUS = 2  # latent cells


class MaskProvenance(str, Enum):
    SALIENCY = "saliency"
    TEXT_PROMPTED = "text_prompted"
    USER_SUPPLIED = "user_supplied"


@dataclass(eq=False)
class ObjectMask:
    pixel_mask: np.ndarray  # (H, W) uint8 in {0,1}, working resolution
    latent_mask: np.ndarray  # (h, w) uint8 in {0,1}
    provenance: MaskProvenance
    dilation_radius: int = BLEND_DILATION_RADIUS

    def __post_init__(self):
        for m in (self.pixel_mask, self.latent_mask):
            if not np.isin(m, (0, 1)).all():
                raise InvalidArgumentError("mask values must be 0 or 1")

    @property
    def area_fraction(self) -> float:
        return float(self.pixel_mask.mean())


@dataclass(eq=False)
class TargetMask:
    soft_map: np.ndarray  # (r, r) float in [0,1], max-normalized
    binary: np.ndarray  # (r, r) uint8 in {0,1}
    token_indices: tuple[int, ...]
    threshold: float


def downsample_mask(pixel_mask: np.ndarray, target_resolution: int) -> np.ndarray:
    """Area-average then threshold at 0.5; ties (mean exactly 0.5) round up."""
    h, w = pixel_mask.shape
    if h % target_resolution or w % target_resolution:
        raise InvalidArgumentError(
            f"target resolution {target_resolution} does not divide mask dims {h}x{w}"
        )
    fy, fx = h // target_resolution, w // target_resolution
    blocks = pixel_mask.astype(np.float64).reshape(target_resolution, fy, target_resolution, fx)
    return (blocks.mean(axis=(1, 3)) >= 0.5).astype(np.uint8)


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev-ball dilation; radius 0 is the identity."""
    if radius < 0:
        raise InvalidArgumentError("dilation radius must be >= 0")
    if radius == 0 or not mask.any():
        return mask.astype(np.uint8)
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(mask.astype(bool), structure=structure).astype(np.uint8)


def _remove_small_components(mask: np.ndarray, min_fraction: float) -> np.ndarray:
    labels, count = ndimage.label(mask)
    if count == 0:
        return mask
    keep = np.zeros_like(mask)
    floor = min_fraction * mask.size
    for idx in range(1, count + 1):
        component = labels == idx
        if component.sum() >= floor:
            keep[component] = 1
    return keep


def _saliency_map(image: np.ndarray) -> np.ndarray:
    """Color-contrast saliency: distance of the blurred color to the global
    mean color, max-normalized. image: (H, W, 3) float in [0,1]."""
    blurred = ndimage.gaussian_filter(image, sigma=(1.5, 1.5, 0))
    distance = np.sqrt(((blurred - image.mean(axis=(0, 1))) ** 2).sum(axis=-1))
    peak = distance.max()
    if peak < 1e-6:
        return np.zeros(distance.shape, dtype=np.float64)
    return distance / peak


class SaliencyBackend:
    """Default extraction path: salient-region matting, no prompt needed."""

    provenance = MaskProvenance.SALIENCY

    def segment(self, image: np.ndarray, prompt: str | None) -> np.ndarray:
        return _saliency_map(image)


class PromptedSegmentationBackend:
    """Text-prompted path. Stand-in implementation: two-way color clustering
    refined from the saliency proposal, picking the cluster farther from the
    border color. A heavyweight grounded-segmentation model can be plugged in
    by implementing the same ``segment`` interface."""

    provenance = MaskProvenance.TEXT_PROMPTED

    def segment(self, image: np.ndarray, prompt: str | None) -> np.ndarray:
        saliency = _saliency_map(image)
        if saliency.max() < 0.5:
            return saliency
        seed = saliency >= 0.5
        fg = image[seed].mean(axis=0)
        bg_region = ~seed
        if not bg_region.any():
            return saliency
        bg = image[bg_region].mean(axis=0)
        # iterate nearest-centroid assignment a few times
        flat = image.reshape(-1, 3)
        for _ in range(4):
            assign = ((flat - fg) ** 2).sum(-1) < ((flat - bg) ** 2).sum(-1)
            if assign.all() or not assign.any():
                break
            fg, bg = flat[assign].mean(axis=0), flat[~assign].mean(axis=0)
        soft = assign.reshape(image.shape[:2]).astype(np.float64)
        border = np.concatenate([image[0], image[-1], image[:, 0], image[:, -1]]).mean(axis=0)
        if ((fg - border) ** 2).sum() < ((bg - border) ** 2).sum():
            soft = 1.0 - soft
        return soft


def extract_object_mask(
    image: torch.Tensor | np.ndarray,
    object_prompt: str | None = None,
    latent_resolution: int | None = None,
    min_area: float = DEFAULT_MIN_AREA,
    backend=None,
) -> ObjectMask:
    """Binary foreground mask of the source object.

    No prompt: saliency path. Prompt given: text-prompted path. Result is
    binarized at 0.5, components below 0.1% of the image area are dropped.
    """
    if isinstance(image, torch.Tensor):
        image = image.permute(1, 2, 0).numpy()
    image = np.asarray(image, dtype=np.float64)
    if backend is None:
        backend = PromptedSegmentationBackend() if object_prompt else SaliencyBackend()
    soft = backend.segment(image, object_prompt)
    pixel_mask = _remove_small_components((soft >= 0.5).astype(np.uint8), SMALL_COMPONENT_AREA)
    if pixel_mask.mean() < min_area:
        raise EmptyMaskError(
            f"object mask covers {pixel_mask.mean():.4%} of the image, "
            f"below the {min_area:.2%} minimum; supply an object prompt or a manual mask"
        )
    if latent_resolution is None:
        latent_resolution = image.shape[0] // 8
    return ObjectMask(
        pixel_mask=pixel_mask,
        latent_mask=downsample_mask(pixel_mask, latent_resolution),
        provenance=backend.provenance,
    )


def user_supplied_mask(
    pixel_mask: np.ndarray,
    latent_resolution: int,
    min_area: float = DEFAULT_MIN_AREA,
) -> ObjectMask:
    """Wrap a caller-provided mask, validating invariants only."""
    pixel_mask = pixel_mask.astype(np.uint8)
    if pixel_mask.mean() < min_area:
        raise EmptyMaskError("user-supplied mask is below the minimum area")
    return ObjectMask(
        pixel_mask=pixel_mask,
        latent_mask=downsample_mask(pixel_mask, latent_resolution),
        provenance=MaskProvenance.USER_SUPPLIED,
    )


def aggregate_target_mask(
    attention_maps: list[np.ndarray],
    token_indices: list[int] | tuple[int, ...],
    threshold: float = DEFAULT_TARGET_THRESHOLD,
) -> TargetMask:
    """Average cross-attention stacks over heads/layers/steps for the object
    tokens, max-normalize, threshold.

    Each entry of ``attention_maps`` is (heads, r*r, tokens) for one
    harvested (step, layer).
    """
    if not token_indices:
        raise InvalidArgumentError("token_indices must not be empty")
    if not attention_maps:
        raise InvalidArgumentError("no attention maps harvested")
    stacked = np.stack([m[:, :, list(token_indices)].mean(axis=(0, 2)) for m in attention_maps])
    mean_map = stacked.mean(axis=0)
    side = int(round(len(mean_map) ** 0.5))
    soft = mean_map.reshape(side, side)
    peak = soft.max()
    if peak > 0:
        soft = soft / peak
    return TargetMask(
        soft_map=soft,
        binary=(soft >= threshold).astype(np.uint8),
        token_indices=tuple(token_indices),
        threshold=threshold,
    )


def blend_region(
    object_mask: ObjectMask,
    target_mask: TargetMask | None,
    latent_resolution: int,
    radius: int = BLEND_DILATION_RADIUS,
) -> np.ndarray:
    """Editable region at latent resolution: dilated union of the object
    footprint and the harvested target footprint."""
    region = downsample_mask(object_mask.latent_mask, latent_resolution) \
        if object_mask.latent_mask.shape[0] != latent_resolution else object_mask.latent_mask
    region = region.copy()
    if target_mask is not None:
        tb = target_mask.binary
        if tb.shape[0] != latent_resolution:
            if latent_resolution % tb.shape[0]:
                raise InvalidArgumentError("target mask resolution does not divide latent grid")
            tb = np.kron(tb, np.ones((latent_resolution // tb.shape[0],) * 2, dtype=np.uint8))
        region = np.maximum(region, tb)
    return dilate_mask(region, radius)
