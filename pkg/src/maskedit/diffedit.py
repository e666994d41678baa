"""Automatic edit-region masks from caption-conditioned noise contrast.

Following DiffEdit's procedure: noise the input latent to a fixed ratio,
predict the noise under the input caption and under the edited caption,
and take the per-cell absolute difference.  Averaging over noise samples
and channels, optional box smoothing, and min-max normalisation turn the
contrast into a soft [0, 1] map; thresholding at theta yields the binary
edit mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from maskedit.errors import MaskeditError, ShapeMismatchError
from maskedit.estimators import NoiseEstimator
from maskedit.scheduler import LatentState, NoiseSchedule


@dataclass(frozen=True)
class MaskEstimateConfig:
    """Knobs for contrast-mask estimation.

    The threshold and noise-sample count follow common DiffEdit practice;
    everything is config-exposed so mask ablations stay reproducible.
    """

    theta: float = 0.3
    n_noise_samples: int = 10
    noising_ratio: float = 0.5
    smoothing_radius: int = 1

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise MaskeditError(f"theta must lie in (0, 1), got {self.theta}")
        if self.n_noise_samples < 1:
            raise MaskeditError(f"n_noise_samples must be >= 1, got {self.n_noise_samples}")
        if not 0.0 < self.noising_ratio < 1.0:
            raise MaskeditError(f"noising_ratio must lie in (0, 1), got {self.noising_ratio}")
        if self.smoothing_radius < 0:
            raise MaskeditError(f"smoothing_radius must be >= 0, got {self.smoothing_radius}")


@dataclass(frozen=True)
class SoftMask:
    """Pre-threshold edit-likelihood map in [0, 1] with a provenance tag."""

    values: np.ndarray
    source: str = "diffedit"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ShapeMismatchError(f"soft mask must be [h, w], got shape {values.shape}")
        if not np.isfinite(values).all():
            raise MaskeditError("soft mask contains non-finite values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise MaskeditError("soft mask values must lie in [0, 1]")


def _normalize(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        # A flat map carries no ordering: all-zero stays empty, any other
        # constant difference means the whole frame changed.
        return np.zeros_like(values) if hi == 0.0 else np.ones_like(values)
    return (values - lo) / (hi - lo)


def estimate_soft_mask(
    x_0: LatentState,
    input_caption: str,
    edited_caption: str,
    cfg: MaskEstimateConfig,
    estimator: NoiseEstimator,
    schedule: NoiseSchedule,
    rng_seed: int,
) -> SoftMask:
    """Average |eps(x_t, c_i, t) - eps(x_t, c_e, t)| over seeded noisings of x_0."""
    if not input_caption or not edited_caption:
        raise MaskeditError("captions must be non-empty")
    t_idx = schedule.timestep_for_ratio(cfg.noising_ratio)
    alpha = schedule.alpha(t_idx)
    rng = np.random.default_rng(rng_seed)

    accum = np.zeros(x_0.shape[1:], dtype=np.float64)
    for _ in range(cfg.n_noise_samples):
        noise = rng.standard_normal(x_0.shape)
        x_t = np.sqrt(alpha) * x_0.data + np.sqrt(1.0 - alpha) * noise
        eps_i = np.asarray(estimator.predict(x_t, input_caption, t_idx), dtype=np.float64)
        eps_e = np.asarray(estimator.predict(x_t, edited_caption, t_idx), dtype=np.float64)
        if eps_i.shape != x_0.shape or eps_e.shape != x_0.shape:
            raise ShapeMismatchError("estimator output shape does not match the latent")
        accum += np.abs(eps_i - eps_e).mean(axis=0)
    diff = accum / cfg.n_noise_samples

    if cfg.smoothing_radius > 0:
        diff = ndimage.uniform_filter(diff, size=2 * cfg.smoothing_radius + 1, mode="nearest")
    return SoftMask(_normalize(diff), source="diffedit")


def binarize_mask(soft: SoftMask, theta: float) -> np.ndarray:
    """Threshold a soft mask: cell is in the mask iff its value >= theta."""
    if not 0.0 < theta < 1.0:
        raise MaskeditError(f"theta must lie in (0, 1), got {theta}")
    return soft.values >= theta


def resize_mask(mask: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resampling of a boolean mask to (height, width)."""
    mask = np.asarray(mask)
    if mask.dtype != bool:
        raise MaskeditError(f"mask must be boolean, got dtype {mask.dtype}")
    if mask.ndim != 2:
        raise ShapeMismatchError(f"mask must be [h, w], got shape {mask.shape}")
    th, tw = target_hw
    if th <= 0 or tw <= 0:
        raise MaskeditError(f"target dims must be positive, got {target_hw}")
    h, w = mask.shape
    rows = np.minimum((np.floor((np.arange(th) + 0.5) * h / th)).astype(int), h - 1)
    cols = np.minimum((np.floor((np.arange(tw) + 0.5) * w / tw)).astype(int), w - 1)
    return mask[np.ix_(rows, cols)]


def overlay_mask(
    image: np.ndarray,
    pixel_mask: np.ndarray,
    color: tuple[float, float, float] = (1.0, 0.0, 0.0),
    alpha: float = 0.5,
) -> np.ndarray:
    """Blend the mask region in colour over the image for inspection output."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape[1:] != pixel_mask.shape:
        raise ShapeMismatchError(
            f"mask shape {pixel_mask.shape} does not match image spatial dims {image.shape[1:]}"
        )
    tint = np.asarray(color, dtype=np.float64)[:, None, None]
    blended = np.where(pixel_mask[None, :, :], (1.0 - alpha) * image + alpha * tint, image)
    return np.clip(blended, 0.0, 1.0)
