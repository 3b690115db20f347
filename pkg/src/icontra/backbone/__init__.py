"""Diffusion backbone facade and the built-in deterministic backend."""

from __future__ import annotations

import os

from .builtin import BuiltinBackbone
from .facade import AttentionController, Backbone
from .schedule import CLEAN_BOUNDARY, NoiseSchedule, make_schedule
from .types import (
    AttentionKind,
    AttentionSite,
    Branch,
    DOWNSAMPLE_FACTOR,
    LatentImage,
    TextEmbedding,
)

MODEL_PATH_ENV = "ICONTRA_MODEL_PATH"


def load_backbone(model_path: str | None = None, working_resolution: int = 512) -> Backbone:
    """Backbone from a checkpoint path, the ICONTRA_MODEL_PATH env var, or
    fresh fixed-seed weights when neither is set."""
    path = model_path or os.environ.get(MODEL_PATH_ENV)
    if path:
        return BuiltinBackbone.load(path)
    return BuiltinBackbone(working_resolution=working_resolution)


__all__ = [
    "AttentionController",
    "AttentionKind",
    "AttentionSite",
    "Backbone",
    "Branch",
    "BuiltinBackbone",
    "CLEAN_BOUNDARY",
    "DOWNSAMPLE_FACTOR",
    "LatentImage",
    "MODEL_PATH_ENV",
    "NoiseSchedule",
    "TextEmbedding",
    "load_backbone",
    "make_schedule",
]
