"""Self-contained diffusion backbone with deterministic, fixed-seed weights.

Stands in for a full pretrained checkpoint so the whole pipeline runs on CPU
with no external model assets:

* autoencoder: orthonormal 8x8 block-DCT keeping the 4x4 low-frequency
  coefficients per color channel (48 latent channels, factor-8 downsample);
* text encoder: hash tokenizer over a fixed random embedding table;
* noise predictor: small U-Net with 16 self-attention and 16 cross-attention
  sites, mirroring the traversal-order layer indexing of the v1.x U-Nets.

Weights are generated from a fixed seed, so two processes constructing the
backbone with the same seed agree bitwise. ``save``/``load`` round-trip the
weights through a single checkpoint file.
"""

from __future__ import annotations

import hashlib
import logging
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InvalidArgumentError, NumericalFailureError
from .facade import AttentionController, Backbone
from .types import AttentionKind, AttentionSite, DOWNSAMPLE_FACTOR, LatentImage, TextEmbedding

log = logging.getLogger(__name__)

LATENT_SCALE = 0.25
DCT_KEEP = 4  # low-frequency block kept per 8x8 patch
COND_SEQ_LEN = 77
EMBED_DIM = 64
VOCAB_SIZE = 4096
BOS_ID, EOS_ID, PAD_ID = 0, 1, 2


def _dct_matrix(n: int = 8) -> torch.Tensor:
    rows = []
    for u in range(n):
        scale = math.sqrt((1.0 if u == 0 else 2.0) / n)
        rows.append([scale * math.cos(math.pi * (2 * x + 1) * u / (2 * n)) for x in range(n)])
    return torch.tensor(rows, dtype=torch.float64).float()


class _BlockDctAutoencoder:
    """Exact-arithmetic pixel<->latent transform (lossy only via the zonal cut).

    Each 8x8 pixel patch maps to one latent cell, so latent cells are
    spatially independent: editing a cell never bleeds into neighbouring
    pixels.
    """

    def __init__(self):
        self.basis = _dct_matrix(DOWNSAMPLE_FACTOR)

    @property
    def latent_channels(self) -> int:
        return 3 * DCT_KEEP * DCT_KEEP

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        c, height, width = image.shape
        n, k = DOWNSAMPLE_FACTOR, DCT_KEEP
        h, w = height // n, width // n
        patches = image.reshape(c, h, n, w, n).permute(0, 1, 3, 2, 4)
        coef = torch.einsum("ux,chwxy,vy->chwuv", self.basis, patches, self.basis)
        z = coef[:, :, :, :k, :k].reshape(c, h, w, k * k).permute(0, 3, 1, 2)
        return z.reshape(c * k * k, h, w) * LATENT_SCALE

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        n, k = DOWNSAMPLE_FACTOR, DCT_KEEP
        ck, h, w = latent.shape
        c = ck // (k * k)
        coef = torch.zeros(c, h, w, n, n, dtype=latent.dtype)
        coef[:, :, :, :k, :k] = (
            (latent / LATENT_SCALE).reshape(c, k * k, h, w).permute(0, 2, 3, 1).reshape(c, h, w, k, k)
        )
        patches = torch.einsum("ux,chwuv,vy->chwxy", self.basis, coef, self.basis)
        image = patches.permute(0, 1, 3, 2, 4).reshape(c, h * n, w * n)
        return image.clamp(0.0, 1.0)


def _token_id(word: str) -> int:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return 3 + int.from_bytes(digest, "little") % (VOCAB_SIZE - 3)


def _sinusoidal(position: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = position[:, None].float() * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class _TransformerBlock(nn.Module):
    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.head_dim = channels // heads
        self.norm1 = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.self_out = nn.Linear(channels, channels)
        self.norm2 = nn.LayerNorm(channels)
        self.q_cross = nn.Linear(channels, channels)
        self.kv_cross = nn.Linear(EMBED_DIM, 2 * channels)
        self.cross_out = nn.Linear(channels, channels)
        self.norm3 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(nn.Linear(channels, 2 * channels), nn.SiLU(), nn.Linear(2 * channels, channels))

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        n, _ = x.shape
        return x.reshape(n, self.heads, self.head_dim).permute(1, 0, 2)

    def _merge(self, x: torch.Tensor) -> torch.Tensor:
        h, n, d = x.shape
        return x.permute(1, 0, 2).reshape(n, h * d)

    def _attend(
        self,
        site: AttentionSite,
        q: torch.Tensor,
        k: torch.Tensor,
        v: torch.Tensor,
        controller: AttentionController | None,
    ) -> torch.Tensor:
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        raw = scores.softmax(dim=-1) @ v
        if controller is not None:
            raw = controller(site, q, k, v, raw)
        return raw

    def forward(
        self,
        x: torch.Tensor,  # (tokens, channels)
        context: torch.Tensor,  # (seq, EMBED_DIM)
        self_site: AttentionSite,
        cross_site: AttentionSite,
        controller: AttentionController | None,
        shared: tuple[torch.Tensor, torch.Tensor],
    ) -> torch.Tensor:
        h = self.norm1(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        out = self._attend(self_site, self._split(q), self._split(k), self._split(v), controller)
        x = x + self.self_out(self._merge(out))

        # cross-attention: a shared low-rank score term (content field x
        # token score) is appended as an extra q/k channel so attention maps
        # agree across heads and layers instead of washing out to uniform
        h = self.norm2(x)
        q = self._split(self.q_cross(h))
        k, v = self.kv_cross(context).chunk(2, dim=-1)
        k = self._split(k)
        pos_field, tok_score = shared
        heads = q.shape[0]
        q = torch.cat([q, pos_field[None, :, None].expand(heads, -1, 1)], dim=-1)
        k = torch.cat([k, tok_score[None, :, None].expand(heads, -1, 1)], dim=-1)
        out = self._attend(cross_site, q, k, self._split(v), controller)
        x = x + self.cross_out(self._merge(out))

        return x + self.mlp(self.norm3(x))


class _ResConv(nn.Module):
    def __init__(self, channels: int, temb_dim: int):
        super().__init__()
        self.norm = nn.GroupNorm(8, channels)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.temb = nn.Linear(temb_dim, channels)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv(F.silu(self.norm(x))) + self.temb(temb)[:, :, None, None]
        return x + h


class _TinyUNet(nn.Module):
    """Noise predictor over 48-channel latents; square inputs, side % 8 == 0.

    The prediction is a (timestep, prompt)-driven base term plus a
    down-weighted latent-dependent term. Keeping the latent sensitivity small
    keeps the prediction consistent across adjacent noise levels, which real
    checkpoints exhibit and the deterministic inversion relies on.
    """

    C0, C1, C2, C3 = 32, 48, 64, 64
    TEMB = 128
    LATENT_GAIN = 0.1
    # Transformer blocks in traversal order: stage id -> (channels, count).
    # Stages: enc@L/4 (3), enc@L/8 (2), mid (2), dec@L/8 (3), dec@L/4 (6).
    BLOCK_PLAN = [("enc4", 3), ("enc8", 2), ("mid", 2), ("dec8", 3), ("dec4", 6)]

    def __init__(self, latent_channels: int):
        super().__init__()
        self.stem = nn.Conv2d(latent_channels, self.C0, 3, padding=1)
        self.temb_mlp = nn.Sequential(nn.Linear(EMBED_DIM, self.TEMB), nn.SiLU(), nn.Linear(self.TEMB, self.TEMB))
        self.down1 = nn.Conv2d(self.C0, self.C1, 3, stride=2, padding=1)
        self.res1 = _ResConv(self.C1, self.TEMB)
        self.down2 = nn.Conv2d(self.C1, self.C2, 3, stride=2, padding=1)
        self.enc4 = nn.ModuleList(_TransformerBlock(self.C2) for _ in range(3))
        self.down3 = nn.Conv2d(self.C2, self.C3, 3, stride=2, padding=1)
        self.enc8 = nn.ModuleList(_TransformerBlock(self.C3) for _ in range(2))
        self.mid = nn.ModuleList(_TransformerBlock(self.C3) for _ in range(2))
        self.dec8 = nn.ModuleList(_TransformerBlock(self.C3) for _ in range(3))
        self.up1 = nn.Conv2d(self.C3, self.C2, 3, padding=1)
        self.dec4 = nn.ModuleList(_TransformerBlock(self.C2) for _ in range(6))
        self.up2 = nn.Conv2d(self.C2, self.C1, 3, padding=1)
        self.res2 = _ResConv(self.C1, self.TEMB)
        self.up3 = nn.Conv2d(self.C1, self.C0, 3, padding=1)
        self.head_norm = nn.GroupNorm(8, self.C0)
        self.head = nn.Conv2d(self.C0, latent_channels, 3, padding=1)
        self.base_mlp = nn.Sequential(
            nn.Linear(self.TEMB + EMBED_DIM, 128), nn.SiLU(), nn.Linear(128, latent_channels)
        )
        self.anchor_conv = nn.Conv2d(latent_channels, 1, 1)
        self.anchor_tok = nn.Linear(EMBED_DIM, 1)
        self.stage_temb = nn.ModuleDict(
            {name: nn.Linear(self.TEMB, ch) for name, ch in
             [("s4", self.C2), ("s8", self.C3), ("d8", self.C3), ("d4", self.C2)]}
        )

    @staticmethod
    def _tokens(x: torch.Tensor) -> torch.Tensor:
        c, h, w = x.shape[1:]
        return x.reshape(x.shape[0], c, h * w).permute(0, 2, 1)[0]

    @staticmethod
    def _grid(tokens: torch.Tensor, side: int) -> torch.Tensor:
        n, c = tokens.shape
        return tokens.permute(1, 0).reshape(1, c, side, side)

    ANCHOR_GAIN = 3.0

    @staticmethod
    def _standardize(x: torch.Tensor) -> torch.Tensor:
        # population std: stays finite even for single-element fields
        return (x - x.mean()) / (x.std(unbiased=False) + 1e-6)

    def _shared_fields(
        self, latent: torch.Tensor, context: torch.Tensor, resolutions: list[int]
    ) -> tuple[dict[int, torch.Tensor], torch.Tensor]:
        field = self.anchor_conv(latent)
        pos = {
            r: self.ANCHOR_GAIN
            * self._standardize(F.adaptive_avg_pool2d(field, (r, r)).reshape(-1))
            for r in resolutions
        }
        tok = self.ANCHOR_GAIN * self._standardize(self.anchor_tok(context).squeeze(-1))
        return pos, tok

    def _run_blocks(
        self,
        blocks: nn.ModuleList,
        x: torch.Tensor,
        context: torch.Tensor,
        sites: list[tuple[AttentionSite, AttentionSite]],
        controller: AttentionController | None,
        shared: tuple[torch.Tensor, torch.Tensor],
    ) -> torch.Tensor:
        side = x.shape[-1]
        tokens = self._tokens(x)
        for block, (self_site, cross_site) in zip(blocks, sites):
            tokens = block(tokens, context, self_site, cross_site, controller, shared)
        return self._grid(tokens, side)

    def forward(
        self,
        latent: torch.Tensor,  # (1, C, s, s)
        t: int,
        context: torch.Tensor,  # (seq, EMBED_DIM)
        sites: dict[str, list[tuple[AttentionSite, AttentionSite]]],
        controller: AttentionController | None,
    ) -> torch.Tensor:
        temb = self.temb_mlp(_sinusoidal(torch.tensor([t]), EMBED_DIM))
        side = latent.shape[-1]
        pos_fields, tok_score = self._shared_fields(latent, context, [side // 4, side // 8])
        sh4 = (pos_fields[side // 4], tok_score)
        sh8 = (pos_fields[side // 8], tok_score)
        x0 = self.stem(latent)
        x1 = self.res1(self.down1(x0), temb)
        x2 = self.down2(x1) + self.stage_temb["s4"](temb)[:, :, None, None]
        x2 = self._run_blocks(self.enc4, x2, context, sites["enc4"], controller, sh4)
        x3 = self.down3(x2) + self.stage_temb["s8"](temb)[:, :, None, None]
        x3 = self._run_blocks(self.enc8, x3, context, sites["enc8"], controller, sh8)
        x3 = self._run_blocks(self.mid, x3, context, sites["mid"], controller, sh8)
        x3 = x3 + self.stage_temb["d8"](temb)[:, :, None, None]
        x3 = self._run_blocks(self.dec8, x3, context, sites["dec8"], controller, sh8)
        y2 = self.up1(F.interpolate(x3, scale_factor=2, mode="nearest")) + x2
        y2 = y2 + self.stage_temb["d4"](temb)[:, :, None, None]
        y2 = self._run_blocks(self.dec4, y2, context, sites["dec4"], controller, sh4)
        y1 = self.up2(F.interpolate(y2, scale_factor=2, mode="nearest")) + x1
        y1 = self.res2(y1, temb)
        y0 = self.up3(F.interpolate(y1, scale_factor=2, mode="nearest")) + x0
        detail = self.head(F.silu(self.head_norm(y0)))
        base = self.base_mlp(torch.cat([temb, context.mean(dim=0, keepdim=True)], dim=-1))
        return base[:, :, None, None] + self.LATENT_GAIN * detail


class BuiltinBackbone(Backbone):
    """Default backbone; deterministic on CPU given a fixed seed."""

    embed_dim = EMBED_DIM
    cond_seq_len = COND_SEQ_LEN

    def __init__(self, working_resolution: int = 512, seed: int = 1234):
        if working_resolution % 64 != 0:
            raise InvalidArgumentError("working_resolution must be a multiple of 64")
        self.working_resolution = working_resolution
        self.seed = seed
        self.autoencoder = _BlockDctAutoencoder()
        self.latent_channels = self.autoencoder.latent_channels
        rng_state = torch.random.get_rng_state()
        try:
            torch.manual_seed(seed)
            self.token_table = torch.randn(VOCAB_SIZE, EMBED_DIM) / math.sqrt(EMBED_DIM)
            self.unet = _TinyUNet(self.latent_channels)
        finally:
            torch.random.set_rng_state(rng_state)
        self.unet.eval()
        for p in self.unet.parameters():
            p.requires_grad_(False)
        self._positional = _sinusoidal(torch.arange(COND_SEQ_LEN), EMBED_DIM) * 0.1
        self.attention_sites, self._site_plan = self._build_sites()

    def _build_sites(self):
        latent_side = self.working_resolution // DOWNSAMPLE_FACTOR
        plan: dict[str, list[tuple[AttentionSite, AttentionSite]]] = {}
        ordered: list[AttentionSite] = []
        index = 0
        for stage, count in _TinyUNet.BLOCK_PLAN:
            res = latent_side // (8 if "8" in stage or stage == "mid" else 4)
            pairs = []
            for _ in range(count):
                self_site = AttentionSite(index, AttentionKind.SELF, res)
                cross_site = AttentionSite(index, AttentionKind.CROSS, res)
                pairs.append((self_site, cross_site))
                ordered.extend([self_site, cross_site])
                index += 1
            plan[stage] = pairs
        return tuple(ordered), plan

    # -- text ---------------------------------------------------------------

    def tokenize(self, prompt: str) -> tuple[int, ...]:
        words = [w for w in "".join(c if c.isalnum() else " " for c in prompt.lower()).split() if w]
        ids = [_token_id(w) for w in words]
        if len(ids) > COND_SEQ_LEN - 2:
            log.warning("prompt truncated to %d tokens (got %d)", COND_SEQ_LEN - 2, len(ids))
            ids = ids[: COND_SEQ_LEN - 2]
        ids = [BOS_ID] + ids + [EOS_ID]
        ids += [PAD_ID] * (COND_SEQ_LEN - len(ids))
        return tuple(ids)

    def encode_text(self, prompt: str) -> TextEmbedding:
        tokens = self.tokenize(prompt)
        emb = self.token_table[list(tokens)] + self._positional
        return TextEmbedding(tokens=tokens, embedding=emb, prompt_text=prompt, is_null=(prompt == ""))

    def token_indices(self, prompt: str, words: list[str]) -> list[int]:
        """Positions of the given words in the tokenized prompt (BOS offset included)."""
        ids = {_token_id(w.lower()) for w in words}
        return [i for i, tok in enumerate(self.tokenize(prompt)) if tok in ids]

    # -- pixels -------------------------------------------------------------

    def encode_image(self, image: torch.Tensor) -> LatentImage:
        if image.ndim != 3 or image.shape[0] != 3:
            raise InvalidArgumentError(f"expected (3, H, W) image, got {tuple(image.shape)}")
        _, height, width = image.shape
        if height % DOWNSAMPLE_FACTOR or width % DOWNSAMPLE_FACTOR:
            raise InvalidArgumentError(
                f"image dims {height}x{width} not divisible by {DOWNSAMPLE_FACTOR}"
            )
        if image.min() < 0.0 or image.max() > 1.0:
            raise InvalidArgumentError("image values must lie in [0, 1]")
        return LatentImage(self.autoencoder.encode(image.float()), height, width, timestep=None)

    def decode_latent(self, latent: LatentImage) -> torch.Tensor:
        return self.autoencoder.decode(latent.data)

    # -- noise prediction ---------------------------------------------------

    def predict_noise(
        self,
        latent: LatentImage,
        t: int,
        cond: TextEmbedding,
        controller: AttentionController | None = None,
    ) -> torch.Tensor:
        data = latent.data
        side = data.shape[-1]
        if data.shape[-2] != side or side != self.working_resolution // DOWNSAMPLE_FACTOR:
            raise InvalidArgumentError(
                f"latent side {data.shape[-2]}x{side} does not match working resolution "
                f"{self.working_resolution}"
            )
        if not 0 <= t < self.train_steps:
            raise InvalidArgumentError(f"timestep {t} outside [0, {self.train_steps})")
        eps = self.unet(data[None], t, cond.embedding, self._site_plan, controller)[0]
        if not torch.isfinite(eps).all():
            raise NumericalFailureError("noise prediction is non-finite")
        return eps

    # -- persistence --------------------------------------------------------

    def save(self, path: str) -> None:
        torch.save(
            {
                "format": "icontra-builtin-v1",
                "working_resolution": self.working_resolution,
                "seed": self.seed,
                "token_table": self.token_table,
                "unet": self.unet.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path: str) -> "BuiltinBackbone":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        if blob.get("format") != "icontra-builtin-v1":
            raise InvalidArgumentError(f"{path} is not a builtin backbone checkpoint")
        backbone = cls(working_resolution=blob["working_resolution"], seed=blob["seed"])
        backbone.token_table = blob["token_table"]
        backbone.unet.load_state_dict(blob["unet"])
        return backbone
