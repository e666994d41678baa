"""Noise-estimator and latent-codec contracts, plus analytic toy backends.

The toy estimators are pure, deterministic, and elementwise, which makes
every downstream property (inversion roundtrips, masked blending, contrast
masks) checkable against closed-form oracles.  Real diffusion backends plug
in behind the same ``predict(x, caption, t)`` surface; caption embedding and
classifier-free guidance are the adapter's concern, not the math core's.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Protocol, runtime_checkable

import numpy as np

from maskedit.errors import CodecError, ShapeMismatchError


@runtime_checkable
class NoiseEstimator(Protocol):
    """Conditional noise predictor eps(x, caption, t)."""

    name: str
    deterministic: bool
    reentrant: bool

    def predict(self, x: np.ndarray, caption: str, t: int) -> np.ndarray: ...


@dataclass
class ToyLinearEstimator:
    """predict(x, c, t) = gain * x + caption_bias[c], independent of t.

    Unknown captions get zero bias.  With gain 0 the output is constant in x,
    which makes DDIM invert-then-denoise roundtrips algebraically exact; with
    nonzero gain each step is an affine map checkable by composition.
    """

    gain: float = 0.0
    caption_bias: Mapping[str, float | np.ndarray] = field(default_factory=dict)
    name: str = "toy-linear"
    deterministic: bool = True
    reentrant: bool = True

    def predict(self, x: np.ndarray, caption: str, t: int) -> np.ndarray:
        bias = self.caption_bias.get(caption, 0.0)
        return self.gain * np.asarray(x, dtype=np.float64) + bias


@dataclass
class RegionToyEstimator:
    """Toy estimator whose predictions for two designated captions differ by
    exactly ``delta`` inside ``difference_support`` and by 0 outside.

    The base estimator must treat the two designated captions identically
    (the default zero-gain toy does); the support mask is broadcast over
    channels.
    """

    difference_support: np.ndarray
    delta: float = 1.0
    input_caption: str = "input"
    edited_caption: str = "edited"
    base: NoiseEstimator = field(default_factory=ToyLinearEstimator)
    name: str = "toy-region"
    deterministic: bool = True
    reentrant: bool = True

    def __post_init__(self):
        support = np.asarray(self.difference_support, dtype=bool)
        if support.ndim != 2:
            raise ShapeMismatchError(f"difference support must be [h, w], got {support.shape}")
        self.difference_support = support

    def predict(self, x: np.ndarray, caption: str, t: int) -> np.ndarray:
        out = np.asarray(self.base.predict(x, caption, t), dtype=np.float64)
        out = np.broadcast_to(out, np.asarray(x).shape).copy()
        if caption == self.edited_caption:
            out += self.delta * self.difference_support[None, :, :]
        return out


def _caption_unit(caption: str) -> float:
    """Deterministic pseudo-random scalar in [-1, 1] derived from the caption."""
    digest = hashlib.sha256(caption.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / float(2**63) - 1.0


@dataclass
class HashedCaptionEstimator:
    """Offline stand-in for a conditional model: any caption shifts the
    prediction by a caption-hashed amount along a fixed vertical ramp.

    Constant in x (zero gain) so inversion roundtrips stay exact, yet two
    different captions always disagree, and the disagreement grows from the
    top row to the bottom row, which gives contrast masks a usable gradient.
    """

    amplitude: float = 0.2
    gain: float = 0.0
    name: str = "caption-hash"
    deterministic: bool = True
    reentrant: bool = True

    def predict(self, x: np.ndarray, caption: str, t: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        h = x.shape[-2]
        ramp = np.linspace(0.0, 1.0, h, dtype=np.float64)[None, :, None]
        return self.gain * x + self.amplitude * _caption_unit(caption) * ramp * np.ones_like(x)


@runtime_checkable
class LatentCodec(Protocol):
    """Encoder/decoder between [3, H, W] images in [0, 1] and latents."""

    name: str
    reconstruction_tolerance: float

    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise CodecError(f"image must be [3, H, W], got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise CodecError(f"image values must lie in [0, 1], got [{image.min()}, {image.max()}]")
    return image


@dataclass
class IdentityCodec:
    """Latent space == pixel space; exact roundtrip."""

    name: str = "identity"
    reconstruction_tolerance: float = 0.0

    def encode(self, image: np.ndarray) -> np.ndarray:
        return _check_image(image).copy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return np.asarray(latent, dtype=np.float64).copy()


@dataclass
class DownsampleCodec:
    """Blockwise-mean downsampling codec (encode) with nearest upsampling (decode).

    decode(encode(img)) equals the blockwise-mean image, so the roundtrip is
    exact precisely on images that are constant within each block (the
    synthetic corpus is built that way); general images reconstruct only up
    to their within-block variation.
    """

    factor: int = 8
    name: str = "downsample"
    reconstruction_tolerance: float = 0.0  # holds for block-constant inputs

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = _check_image(image)
        c, h, w = image.shape
        f = self.factor
        if h % f or w % f:
            raise CodecError(f"image dims {h}x{w} must be multiples of {f}")
        return image.reshape(c, h // f, f, w // f, f).mean(axis=(2, 4))

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        return latent.repeat(self.factor, axis=-2).repeat(self.factor, axis=-1)


@dataclass
class SerializedEstimator:
    """Wrap a non-reentrant estimator so concurrent pipelines take turns."""

    inner: NoiseEstimator

    def __post_init__(self):
        import threading

        self._lock = threading.Lock()
        self.name = self.inner.name
        self.deterministic = self.inner.deterministic
        self.reentrant = True

    def predict(self, x: np.ndarray, caption: str, t: int) -> np.ndarray:
        with self._lock:
            return self.inner.predict(x, caption, t)
