"""Grounding-detector -> segmentation-model composition.

A grounding detector maps (image, phrase) to scored bounding boxes; a
segmentation model refines a box into a per-pixel binary mask.  The edit
mask is the union of the masks of the selected detections; selection is
score-threshold plus an optional instance cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from maskedit.errors import MaskeditError, ObjectNotFoundError

# Default score cutoff for accepting a detection; config-exposed.
DEFAULT_SCORE_THRESHOLD = 0.35


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (row, col) plus height and width in pixels."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.top < 0 or self.left < 0:
            raise MaskeditError(f"box corner must be non-negative, got ({self.top}, {self.left})")
        if self.height < 1 or self.width < 1:
            raise MaskeditError(f"box extent must be >= 1, got {self.height}x{self.width}")

    def check_within(self, image_hw: tuple[int, int]) -> None:
        h, w = image_hw
        if self.top + self.height > h or self.left + self.width > w:
            raise MaskeditError(f"box {self} exceeds image bounds {h}x{w}")

    @property
    def area(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    phrase: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise MaskeditError(f"score must lie in [0, 1], got {self.score}")


@runtime_checkable
class GroundingDetector(Protocol):
    name: str
    reentrant: bool

    def detect(self, image: np.ndarray, query: str) -> list[Detection]: ...


@runtime_checkable
class SegmentationModel(Protocol):
    name: str
    reentrant: bool

    def segment(self, image: np.ndarray, box: BoundingBox) -> np.ndarray: ...


@dataclass(frozen=True)
class SelectionPolicy:
    """Which detections feed the mask: score cutoff, instance cap, union combine."""

    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    max_instances: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise MaskeditError(f"score_threshold must lie in [0, 1], got {self.score_threshold}")
        if self.max_instances is not None and self.max_instances < 1:
            raise MaskeditError(f"max_instances must be >= 1 or None, got {self.max_instances}")


def ground(
    image: np.ndarray,
    query: str,
    detector: GroundingDetector,
    policy: SelectionPolicy,
) -> list[Detection]:
    """Detections above the policy threshold, best first, capped at max_instances."""
    if not query.strip():
        raise MaskeditError("segmentation prompt must be non-empty")
    detections = [d for d in detector.detect(image, query) if d.score >= policy.score_threshold]
    detections.sort(key=lambda d: (-d.score, d.box.top, d.box.left))
    if policy.max_instances is not None:
        detections = detections[: policy.max_instances]
    return detections


def segment_box(image: np.ndarray, box: BoundingBox, segmenter: SegmentationModel) -> np.ndarray:
    """Refine a box to an image-resolution boolean mask."""
    box.check_within(image.shape[1:])
    try:
        mask = segmenter.segment(image, box)
    except Exception as exc:
        raise MaskeditError(f"segmentation backend failed for box {box}: {exc}") from exc
    mask = np.asarray(mask)
    if mask.dtype != bool or mask.shape != image.shape[1:]:
        raise MaskeditError(
            f"segmenter must return a boolean image-resolution mask, got {mask.dtype} {mask.shape}"
        )
    return mask


def compute_segmentation_mask(
    image: np.ndarray,
    query: str,
    detector: GroundingDetector,
    segmenter: SegmentationModel,
    policy: SelectionPolicy,
) -> np.ndarray:
    """Union of per-detection masks; raises ObjectNotFoundError when nothing matches."""
    detections = ground(image, query, detector, policy)
    if not detections:
        raise ObjectNotFoundError(query)
    mask = np.zeros(image.shape[1:], dtype=bool)
    for detection in detections:
        mask |= segment_box(image, detection.box, segmenter)
    return mask
