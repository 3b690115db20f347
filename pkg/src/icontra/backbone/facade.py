"""Uniform facade over a pretrained latent text-to-image diffusion model.

The facade exposes text encoding, pixel<->latent conversion, noise
prediction with hookable attention sites, and classifier-free guidance.
Concrete backends subclass :class:`Backbone`.
"""

from __future__ import annotations

from typing import Protocol

import torch

from ..errors import NumericalFailureError
from .schedule import NoiseSchedule, make_schedule
from .types import AttentionSite, LatentImage, TextEmbedding


class AttentionController(Protocol):
    """Hook consulted at every attention site of the noise predictor.

    Receives the site address, the per-head query/key/value tensors
    (heads, n, head_dim) and the raw attention output the model computed,
    and returns the attention output to use (same shape as ``raw_out``).
    A controller that returns ``raw_out`` unchanged is a no-op.
    """

    def __call__(
        self,
        site: AttentionSite,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        raw_out: torch.Tensor,
    ) -> torch.Tensor: ...


class Backbone:
    """Abstract diffusion backbone. All tensors are float32 on CPU unless a
    backend says otherwise; calls must be externally serialized per device."""

    train_steps: int = 1000
    latent_channels: int
    embed_dim: int
    cond_seq_len: int
    #: Every attention site in traversal order, one full noise-predictor pass.
    attention_sites: tuple[AttentionSite, ...]

    def make_schedule(self, num_inference_steps: int) -> NoiseSchedule:
        return make_schedule(num_inference_steps, self.train_steps)

    def encode_text(self, prompt: str) -> TextEmbedding:
        raise NotImplementedError

    def encode_image(self, image: torch.Tensor) -> LatentImage:
        """image: (3, H, W) float in [0,1], H and W multiples of 8."""
        raise NotImplementedError

    def decode_latent(self, latent: LatentImage) -> torch.Tensor:
        """Returns (3, H, W) float clamped to [0,1]."""
        raise NotImplementedError

    def predict_noise(
        self,
        latent: LatentImage,
        t: int,
        cond: TextEmbedding,
        controller: AttentionController | None = None,
    ) -> torch.Tensor:
        raise NotImplementedError

    def guided_noise(
        self,
        latent: LatentImage,
        t: int,
        cond: TextEmbedding,
        uncond: TextEmbedding,
        scale: float,
        controller: AttentionController | None = None,
    ) -> torch.Tensor:
        """Classifier-free guidance: eps_u + scale * (eps_c - eps_u).

        The unconditional pass runs first, then the conditional pass, so a
        stateful controller sees a fixed pass order.
        """
        eps_u = self.predict_noise(latent, t, uncond, controller)
        eps_c = self.predict_noise(latent, t, cond, controller)
        # scale 1 must reduce to the conditional prediction exactly, without
        # the rounding the extrapolation formula would introduce
        eps = eps_c if scale == 1.0 else eps_u + scale * (eps_c - eps_u)
        if not torch.isfinite(eps).all():
            raise NumericalFailureError("guided noise estimate is non-finite")
        return eps
