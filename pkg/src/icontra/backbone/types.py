"""Domain types shared across the diffusion facade."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch

from ..errors import InvalidArgumentError

#: Pixel-to-latent downsampling factor of the backbone.
DOWNSAMPLE_FACTOR = 8


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    tokens: tuple[int, ...]
    embedding: torch.Tensor  # (seq_len, embed_dim)
    prompt_text: str
    is_null: bool

    def __post_init__(self):
        if self.is_null and self.prompt_text != "":
            raise InvalidArgumentError("null embedding must come from the empty prompt")


@dataclass(eq=False)
class LatentImage:
    """Latent-space image, channels-first, spatial dims = pixel dims / 8."""

    data: torch.Tensor  # (channels, h, w)
    pixel_height: int
    pixel_width: int
    timestep: int | None = None

    def __post_init__(self):
        _, h, w = self.data.shape
        if h * DOWNSAMPLE_FACTOR != self.pixel_height or w * DOWNSAMPLE_FACTOR != self.pixel_width:
            raise InvalidArgumentError(
                f"latent dims {h}x{w} do not match pixel dims "
                f"{self.pixel_height}x{self.pixel_width} at factor {DOWNSAMPLE_FACTOR}"
            )
        if not torch.isfinite(self.data).all():
            raise InvalidArgumentError("latent contains non-finite values")

    def with_data(self, data: torch.Tensor, timestep: int | None = None) -> "LatentImage":
        return LatentImage(data, self.pixel_height, self.pixel_width, timestep)


class AttentionKind(str, Enum):
    SELF = "self_attention"
    CROSS = "cross_attention"


class Branch(str, Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True)
class AttentionSite:
    """Address of one attention computation inside the noise predictor.

    ``layer_index`` counts sites of the same kind in traversal order.
    """

    layer_index: int
    kind: AttentionKind
    resolution: int
    branch: Branch = Branch.TARGET
