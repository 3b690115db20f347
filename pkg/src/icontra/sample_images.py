"""Deterministic photo-like test images: smooth scenes with one salient object.

Band-limited on purpose so the block-DCT autoencoder round-trips them well;
each image has a distinct foreground object over a gradient background.
"""

from __future__ import annotations

import torch


def _grid(size: int) -> tuple[torch.Tensor, torch.Tensor]:
    axis = torch.linspace(0.0, 1.0, size)
    return torch.meshgrid(axis, axis, indexing="ij")


def _soft_disk(yy, xx, cy, cx, r, sharpness=80.0) -> torch.Tensor:
    d = ((yy - cy) ** 2 + (xx - cx) ** 2).sqrt()
    return torch.sigmoid(sharpness * (r - d))


def sample_photo(index: int, size: int = 512) -> torch.Tensor:
    """One of three fixed scenes, (3, size, size) float in [0, 1]."""
    yy, xx = _grid(size)
    if index % 3 == 0:
        # warm lamp-like blob on a cool vertical gradient
        bg = torch.stack([0.25 + 0.3 * yy, 0.35 + 0.25 * yy, 0.55 + 0.2 * yy])
        obj = _soft_disk(yy, xx, 0.45, 0.5, 0.22)
        color = torch.tensor([0.95, 0.75, 0.25]).view(3, 1, 1)
    elif index % 3 == 1:
        # reddish rounded bag on a diagonal green-grey gradient
        bg = torch.stack([0.4 + 0.15 * xx, 0.45 + 0.2 * (xx + yy) / 2, 0.4 + 0.1 * yy])
        obj = _soft_disk(yy, xx, 0.55, 0.45, 0.18) + 0.8 * _soft_disk(yy, xx, 0.38, 0.45, 0.08)
        obj = obj.clamp(0.0, 1.0)
        color = torch.tensor([0.75, 0.2, 0.25]).view(3, 1, 1)
    else:
        # dark sofa-like slab on a soft radial backdrop
        radial = ((yy - 0.3) ** 2 + (xx - 0.5) ** 2).sqrt()
        bg = torch.stack([0.7 - 0.3 * radial, 0.65 - 0.25 * radial, 0.6 - 0.2 * radial])
        obj = _soft_disk(yy, xx, 0.62, 0.5, 0.26) * _soft_disk(yy, xx, 0.5, 0.5, 0.45)
        color = torch.tensor([0.25, 0.3, 0.5]).view(3, 1, 1)
    shading = 0.9 + 0.1 * torch.sin(3.0 * xx + 2.0 * yy)
    image = bg * (1.0 - obj[None]) + color * obj[None] * shading[None]
    return image.clamp(0.0, 1.0)


def sample_photos(size: int = 512) -> list[torch.Tensor]:
    return [sample_photo(i, size) for i in range(3)]
