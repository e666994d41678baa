"""Synthetic rectangle scenes and the mock grounding/segmentation backends.

A scene is a background colour plus labelled, axis-aligned, uniformly
filled rectangles; it renders to a [3, H, W] image and round-trips through
a sidecar geometry file, so every detector/segmenter test has an exact
oracle.  The mock detector recovers rectangles from the pixels alone (exact
fill-colour connected components against a label palette), which means it
also works on images uploaded as raw bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from maskedit.errors import MaskeditError
from maskedit.segmenter import BoundingBox, Detection

Color = tuple[float, float, float]

# Colours are chosen exact in 8-bit so PNG round-trips preserve them.
DEFAULT_PALETTE: tuple[tuple[str, Color, float], ...] = (
    ("red square", (1.0, 0.0, 0.0), 1.0),
    ("blue square", (0.0, 0.0, 1.0), 1.0),
    ("green box", (0.0, 1.0, 0.0), 1.0),
    ("yellow panel", (1.0, 1.0, 0.0), 1.0),
    ("purple patch", (0.5019607843137255, 0.0, 0.5019607843137255), 1.0),
    ("faint gray blob", (0.6, 0.6, 0.6), 0.2),
)


def _norm_token(token: str) -> str:
    token = "".join(ch for ch in token.lower() if ch.isalnum())
    return token[:-1] if token.endswith("s") and len(token) > 2 else token


def phrases_match(a: str, b: str) -> bool:
    """Case-, punctuation-, and trailing-plural-insensitive phrase equality."""
    ta = [_norm_token(t) for t in a.split()]
    tb = [_norm_token(t) for t in b.split()]
    return ta == tb and len(ta) > 0


@dataclass(frozen=True)
class Rectangle:
    label: str
    top: int
    left: int
    height: int
    width: int
    color: Color

    @property
    def box(self) -> BoundingBox:
        return BoundingBox(self.top, self.left, self.height, self.width)


@dataclass(frozen=True)
class SceneGeometry:
    height: int
    width: int
    rectangles: tuple[Rectangle, ...]
    background: Color = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for rect in self.rectangles:
            rect.box.check_within((self.height, self.width))
            if tuple(rect.color) == tuple(self.background):
                raise MaskeditError(f"rectangle {rect.label!r} matches the background colour")

    def render(self) -> np.ndarray:
        image = np.empty((3, self.height, self.width), dtype=np.float64)
        for c in range(3):
            image[c] = self.background[c]
        for rect in self.rectangles:
            for c in range(3):
                image[c, rect.top : rect.top + rect.height, rect.left : rect.left + rect.width] = rect.color[c]
        return image

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "background": list(self.background),
            "rectangles": [
                {
                    "label": r.label,
                    "top": r.top,
                    "left": r.left,
                    "height": r.height,
                    "width": r.width,
                    "color": list(r.color),
                }
                for r in self.rectangles
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SceneGeometry":
        rects = tuple(
            Rectangle(
                label=r["label"],
                top=r["top"],
                left=r["left"],
                height=r["height"],
                width=r["width"],
                color=tuple(r["color"]),
            )
            for r in payload["rectangles"]
        )
        return cls(
            height=payload["height"],
            width=payload["width"],
            rectangles=rects,
            background=tuple(payload.get("background", (1.0, 1.0, 1.0))),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "SceneGeometry":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def sidecar_path(image_path: str | Path) -> Path:
    return Path(image_path).with_suffix(".geometry.json")


@dataclass
class PaletteDetector:
    """Mock grounding detector: exact fill-colour connected components.

    Each palette entry is (label, colour, score); the query is matched
    against labels, and every connected region of exactly that colour yields
    one detection with the entry's score.  Colour comparison allows a small
    tolerance so 8-bit PNG round-trips still match.
    """

    palette: tuple[tuple[str, Color, float], ...] = DEFAULT_PALETTE
    color_tolerance: float = 1e-6
    name: str = "mock-palette"
    reentrant: bool = True

    def detect(self, image: np.ndarray, query: str) -> list[Detection]:
        image = np.asarray(image, dtype=np.float64)
        detections: list[Detection] = []
        for label, color, score in self.palette:
            if not phrases_match(label, query):
                continue
            target = np.asarray(color, dtype=np.float64)[:, None, None]
            hit = np.all(np.abs(image - target) <= self.color_tolerance, axis=0)
            labelled, count = ndimage.label(hit)
            for region in range(1, count + 1):
                rows, cols = np.nonzero(labelled == region)
                box = BoundingBox(
                    top=int(rows.min()),
                    left=int(cols.min()),
                    height=int(rows.max() - rows.min() + 1),
                    width=int(cols.max() - cols.min() + 1),
                )
                detections.append(Detection(box=box, score=score, phrase=label))
        detections.sort(key=lambda d: (-d.score, d.box.top, d.box.left))
        return detections


@dataclass
class BoxFillSegmenter:
    """Mock segmentation model: the mask is exactly the box interior."""

    name: str = "mock-boxfill"
    reentrant: bool = True

    def segment(self, image: np.ndarray, box: BoundingBox) -> np.ndarray:
        mask = np.zeros(np.asarray(image).shape[1:], dtype=bool)
        mask[box.top : box.top + box.height, box.left : box.left + box.width] = True
        return mask


def demo_scene(size: int = 64) -> SceneGeometry:
    """One red square on a white background; block-aligned for the downsample codec."""
    return SceneGeometry(
        height=size,
        width=size,
        rectangles=(Rectangle("red square", size // 8, size // 4, size // 4, size // 4, (1.0, 0.0, 0.0)),),
    )


def random_scene(rng: np.random.Generator, size: int = 64, max_rects: int = 3) -> SceneGeometry:
    """Random non-touching palette rectangles; exact oracle geometry by construction."""
    rects: list[Rectangle] = []
    occupied = np.zeros((size, size), dtype=bool)
    n = int(rng.integers(1, max_rects + 1))
    labels = rng.choice(len(DEFAULT_PALETTE) - 1, size=n, replace=False)  # skip the faint entry
    for idx in labels:
        label, color, _ = DEFAULT_PALETTE[int(idx)]
        for _ in range(50):
            height = int(rng.integers(4, size // 3))
            width = int(rng.integers(4, size // 3))
            top = int(rng.integers(0, size - height))
            left = int(rng.integers(0, size - width))
            pad_t, pad_l = max(0, top - 1), max(0, left - 1)
            if not occupied[pad_t : top + height + 1, pad_l : left + width + 1].any():
                occupied[pad_t : top + height + 1, pad_l : left + width + 1] = True
                rects.append(Rectangle(label, top, left, height, width, color))
                break
    return SceneGeometry(height=size, width=size, rectangles=tuple(rects))


def write_corpus(directory: str | Path, count: int = 20, seed: int = 0, size: int = 64) -> list[Path]:
    """Render a deterministic corpus of scenes with sidecar geometry files."""
    from maskedit.pipeline import save_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        scene = random_scene(rng, size=size)
        image_path = directory / f"scene_{i:03d}.png"
        save_image(scene.render(), image_path)
        scene.save(sidecar_path(image_path))
        paths.append(image_path)
    return paths
