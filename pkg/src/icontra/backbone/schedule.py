"""Diffusion timestep discretization and cumulative signal coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ..errors import InvalidArgumentError

# Training beta range of the v1.x latent-diffusion checkpoints
# (scaled-linear: linear in sqrt(beta) space).
BETA_START = 0.00085
BETA_END = 0.012

#: Sentinel timestep for the clean-image boundary below the lowest timestep.
CLEAN_BOUNDARY = -1


def _train_alpha_bar(train_steps: int) -> torch.Tensor:
    betas = torch.linspace(BETA_START**0.5, BETA_END**0.5, train_steps, dtype=torch.float64) ** 2
    return torch.cumprod(1.0 - betas, dim=0).to(torch.float32)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Descending inference timesteps plus the alpha-bar lookup they index.

    ``alpha_bar(CLEAN_BOUNDARY)`` is exactly 1, so a step to the boundary
    lands on the predicted clean latent.
    """

    num_inference_steps: int
    timesteps: tuple[int, ...]
    train_steps: int
    _alpha_bar: torch.Tensor = field(repr=False)

    def alpha_bar(self, t: int) -> float:
        if t == CLEAN_BOUNDARY:
            return 1.0
        if not 0 <= t < self.train_steps:
            raise InvalidArgumentError(f"timestep {t} outside [0, {self.train_steps})")
        return float(self._alpha_bar[t])

    def ascending(self) -> tuple[int, ...]:
        return tuple(reversed(self.timesteps))

    def prev_timestep(self, t: int) -> int:
        """Next-lower timestep in the schedule, or the clean boundary."""
        ts = self.timesteps
        idx = ts.index(t)
        return ts[idx + 1] if idx + 1 < len(ts) else CLEAN_BOUNDARY


def make_schedule(num_inference_steps: int, train_steps: int = 1000) -> NoiseSchedule:
    """Evenly strided descending timesteps over the training range.

    Leading spacing with a +1 offset (t_i = i * stride + 1) so the final
    denoise lands at t=1; the offset drops to 0 at stride 1, where +1 would
    push the top timestep out of range.
    """
    if num_inference_steps <= 0:
        raise InvalidArgumentError("num_inference_steps must be positive")
    if train_steps <= 0:
        raise InvalidArgumentError("train_steps must be positive")
    if num_inference_steps > train_steps:
        raise InvalidArgumentError(
            f"num_inference_steps ({num_inference_steps}) exceeds train_steps ({train_steps})"
        )
    stride = train_steps // num_inference_steps
    offset = 1 if stride > 1 else 0
    timesteps = tuple(i * stride + offset for i in range(num_inference_steps - 1, -1, -1))
    return NoiseSchedule(
        num_inference_steps=num_inference_steps,
        timesteps=timesteps,
        train_steps=train_steps,
        _alpha_bar=_train_alpha_bar(train_steps),
    )
