"""Mask-guided DDIM editing.

Invert the input latent to the encoding ratio under the input caption,
then denoise under the edited caption, blending each intermediate with the
cached inversion state through the mask:

    y <- x_r
    for t = r_idx .. 1:
        y <- denoise(y, edited_caption, t)
        y <- where(M, y, trajectory[t-1])

Inside the mask the edited caption drives the content; outside the mask the
final latent is bitwise-equal to the input because the last blend restores
trajectory[0] = x_0.  Blending selects per cell (no arithmetic), so the
out-of-mask guarantee is exact, not approximate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from maskedit.errors import MaskeditError, ShapeMismatchError
from maskedit.estimators import NoiseEstimator
from maskedit.scheduler import LatentState, NoiseSchedule, Trajectory, ddim_denoise_step, invert_to_ratio


@dataclass(frozen=True)
class EditConfig:
    """Editing knobs: encoding ratio, step budget, seed, caption routing."""

    encoding_ratio: float = 0.8
    ddim_steps: int = 50
    seed: int = 0
    caption_for_inversion: Literal["input_caption", "empty"] = "input_caption"
    caption_for_denoising: Literal["edited_caption"] = "edited_caption"
    pixel_paste_back: bool = False
    debug_artifacts: bool = False

    def __post_init__(self):
        if not 0.0 < self.encoding_ratio <= 1.0:
            raise MaskeditError(f"encoding_ratio must lie in (0, 1], got {self.encoding_ratio}")
        if self.ddim_steps < 1:
            raise MaskeditError(f"ddim_steps must be >= 1, got {self.ddim_steps}")


def _check_mask(mask: np.ndarray, latent_shape: tuple[int, ...]) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool:
        raise MaskeditError(f"mask must be boolean, got dtype {mask.dtype}")
    if mask.shape != latent_shape[1:]:
        raise ShapeMismatchError(f"mask shape {mask.shape} does not match latent spatial dims {latent_shape[1:]}")
    return mask


def masked_blend(y_t: np.ndarray, x_t: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-cell select: mask * y + (1 - mask) * x, mask broadcast over channels."""
    y_t = np.asarray(y_t, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if y_t.shape != x_t.shape:
        raise ShapeMismatchError(f"blend inputs disagree: {y_t.shape} vs {x_t.shape}")
    mask = _check_mask(mask, y_t.shape)
    return np.where(mask[None, :, :], y_t, x_t)


def mask_guided_edit(
    x_0: LatentState,
    mask: np.ndarray,
    input_caption: str,
    edited_caption: str,
    cfg: EditConfig,
    estimator: NoiseEstimator,
    schedule: NoiseSchedule,
    on_step: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[LatentState, Trajectory]:
    """Run the full edit loop; returns the edited latent at t=0 and the
    inversion trajectory it blended against."""
    mask = _check_mask(mask, x_0.shape)
    inversion_caption = input_caption if cfg.caption_for_inversion == "input_caption" else ""
    trajectory = invert_to_ratio(x_0, estimator, inversion_caption, cfg.encoding_ratio, schedule)

    state = trajectory.final
    for t in range(trajectory.max_timestep, 0, -1):
        state = ddim_denoise_step(state, estimator, edited_caption, schedule)
        blended = masked_blend(state.data, trajectory.state(t - 1).data, mask)
        state = LatentState(blended, t - 1)
        if on_step is not None:
            on_step(t - 1, blended)
    return state, trajectory
