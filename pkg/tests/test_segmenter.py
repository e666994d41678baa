from __future__ import annotations

import numpy as np
import pytest

from maskedit.errors import MaskeditError, ObjectNotFoundError
from maskedit.segmenter import (
    BoundingBox,
    Detection,
    SelectionPolicy,
    compute_segmentation_mask,
    ground,
    segment_box,
)
from maskedit.synthetic import (
    BoxFillSegmenter,
    PaletteDetector,
    Rectangle,
    SceneGeometry,
    phrases_match,
    random_scene,
    sidecar_path,
)

RED = (1.0, 0.0, 0.0)
BLUE = (0.0, 0.0, 1.0)


def _scene(*rects: Rectangle, size: int = 64) -> SceneGeometry:
    return SceneGeometry(height=size, width=size, rectangles=tuple(rects))


# ---------------------------------------------------------------------------
# types


def test_bounding_box_validation():
    BoundingBox(0, 0, 1, 1)
    with pytest.raises(MaskeditError):
        BoundingBox(-1, 0, 4, 4)
    with pytest.raises(MaskeditError):
        BoundingBox(0, 0, 0, 4)
    with pytest.raises(MaskeditError):
        BoundingBox(60, 60, 8, 8).check_within((64, 64))


def test_detection_score_range():
    box = BoundingBox(0, 0, 2, 2)
    Detection(box, 1.0, "thing")
    with pytest.raises(MaskeditError):
        Detection(box, 1.2, "thing")


def test_selection_policy_validation():
    SelectionPolicy()
    with pytest.raises(MaskeditError):
        SelectionPolicy(score_threshold=1.5)
    with pytest.raises(MaskeditError):
        SelectionPolicy(max_instances=0)


def test_phrase_matching_tolerances():
    assert phrases_match("Red square", "red square")
    assert phrases_match("laptops", "Laptop")
    assert phrases_match("red square.", "red square")
    assert not phrases_match("red square", "blue square")
    assert not phrases_match("red", "red square")


# ---------------------------------------------------------------------------
# mock detector geometry oracle


def test_detector_recovers_marked_square():
    scene = _scene(Rectangle("red square", 10, 20, 16, 16, RED))
    detections = PaletteDetector().detect(scene.render(), "red square")
    assert len(detections) == 1
    det = detections[0]
    assert (det.box.top, det.box.left, det.box.height, det.box.width) == (10, 20, 16, 16)
    assert det.score == 1.0


def test_detector_no_match_gives_empty_list():
    scene = _scene(Rectangle("red square", 10, 20, 16, 16, RED))
    assert PaletteDetector().detect(scene.render(), "unicorn") == []


def test_detector_finds_multiple_instances_sorted():
    scene = _scene(
        Rectangle("red square", 40, 40, 8, 8, RED),
        Rectangle("red square", 4, 4, 8, 8, RED),
    )
    detections = PaletteDetector().detect(scene.render(), "red square")
    assert len(detections) == 2
    assert (detections[0].box.top, detections[0].box.left) == (4, 4)  # tie broken by position


def test_ground_policy_truncation():
    scene = _scene(
        Rectangle("red square", 4, 4, 8, 8, RED),
        Rectangle("red square", 40, 40, 8, 8, RED),
    )
    got = ground(scene.render(), "red square", PaletteDetector(), SelectionPolicy(max_instances=1))
    assert len(got) == 1
    assert (got[0].box.top, got[0].box.left) == (4, 4)


def test_ground_score_threshold_filters_faint_entries():
    scene = _scene(
        Rectangle("faint gray blob", 8, 8, 8, 8, (0.6, 0.6, 0.6)),
    )
    image = scene.render()
    detector = PaletteDetector()
    assert ground(image, "faint gray blob", detector, SelectionPolicy(score_threshold=0.5)) == []
    kept = ground(image, "faint gray blob", detector, SelectionPolicy(score_threshold=0.1))
    assert len(kept) == 1 and kept[0].score == 0.2


def test_ground_requires_query():
    with pytest.raises(MaskeditError):
        ground(np.zeros((3, 8, 8)), "  ", PaletteDetector(), SelectionPolicy())


# ---------------------------------------------------------------------------
# segment_box


def test_segment_box_area_oracle():
    scene = _scene(Rectangle("red square", 10, 20, 16, 16, RED))
    mask = segment_box(scene.render(), BoundingBox(10, 20, 16, 16), BoxFillSegmenter())
    assert mask.sum() == 16 * 16
    assert mask.shape == (64, 64)


def test_segment_box_full_image_and_single_pixel():
    image = np.zeros((3, 8, 8))
    assert segment_box(image, BoundingBox(0, 0, 8, 8), BoxFillSegmenter()).all()
    single = segment_box(image, BoundingBox(3, 5, 1, 1), BoxFillSegmenter())
    assert single.sum() == 1 and bool(single[3, 5])


def test_segment_box_out_of_bounds():
    with pytest.raises(MaskeditError):
        segment_box(np.zeros((3, 8, 8)), BoundingBox(6, 6, 4, 4), BoxFillSegmenter())


# ---------------------------------------------------------------------------
# compute_segmentation_mask


def test_union_of_disjoint_boxes_additive():
    scene = _scene(
        Rectangle("red square", 4, 4, 8, 8, RED),
        Rectangle("red square", 40, 40, 10, 12, RED),
    )
    mask = compute_segmentation_mask(scene.render(), "red square", PaletteDetector(), BoxFillSegmenter(), SelectionPolicy())
    assert mask.sum() == 8 * 8 + 10 * 12


def test_single_match_equals_segment_box():
    scene = _scene(Rectangle("blue square", 12, 8, 6, 10, BLUE))
    image = scene.render()
    mask = compute_segmentation_mask(image, "blue square", PaletteDetector(), BoxFillSegmenter(), SelectionPolicy())
    np.testing.assert_array_equal(mask, segment_box(image, BoundingBox(12, 8, 6, 10), BoxFillSegmenter()))


def test_object_not_found_carries_query():
    scene = _scene(Rectangle("red square", 4, 4, 8, 8, RED))
    with pytest.raises(ObjectNotFoundError, match="object not found: unicorn"):
        compute_segmentation_mask(scene.render(), "unicorn", PaletteDetector(), BoxFillSegmenter(), SelectionPolicy())


def test_mask_support_within_selected_boxes():
    scene = _scene(
        Rectangle("red square", 4, 4, 8, 8, RED),
        Rectangle("blue square", 30, 30, 8, 8, BLUE),
    )
    image = scene.render()
    mask = compute_segmentation_mask(image, "red square", PaletteDetector(), BoxFillSegmenter(), SelectionPolicy())
    allowed = np.zeros((64, 64), dtype=bool)
    allowed[4:12, 4:12] = True
    assert not (mask & ~allowed).any()


def test_union_monotone_in_threshold():
    # Two same-label entries at different scores: lowering the threshold only grows the mask.
    scene = _scene(
        Rectangle("red square", 4, 4, 8, 8, RED),
        Rectangle("faint gray blob", 40, 40, 8, 8, (0.6, 0.6, 0.6)),
    )
    image = scene.render()
    detector = PaletteDetector(
        palette=(
            ("thing", RED, 1.0),
            ("thing", (0.6, 0.6, 0.6), 0.2),
        )
    )
    strict = compute_segmentation_mask(image, "thing", detector, BoxFillSegmenter(), SelectionPolicy(score_threshold=0.5))
    loose = compute_segmentation_mask(image, "thing", detector, BoxFillSegmenter(), SelectionPolicy(score_threshold=0.1))
    assert np.all(~strict | loose) and loose.sum() > strict.sum()


def test_policy_determinism():
    scene = _scene(
        Rectangle("red square", 4, 4, 8, 8, RED),
        Rectangle("red square", 40, 40, 8, 8, RED),
    )
    image = scene.render()
    args = (image, "red square", PaletteDetector(), BoxFillSegmenter(), SelectionPolicy(max_instances=1))
    np.testing.assert_array_equal(compute_segmentation_mask(*args), compute_segmentation_mask(*args))


# ---------------------------------------------------------------------------
# synthetic corpus machinery


def test_scene_geometry_sidecar_roundtrip(tmp_path):
    scene = _scene(Rectangle("red square", 4, 4, 8, 8, RED))
    path = tmp_path / "scene.geometry.json"
    scene.save(path)
    loaded = SceneGeometry.load(path)
    assert loaded == scene
    assert sidecar_path(tmp_path / "scene.png") == path


def test_random_scenes_are_exactly_recoverable():
    rng = np.random.default_rng(11)
    detector = PaletteDetector()
    segmenter = BoxFillSegmenter()
    for _ in range(20):
        scene = random_scene(rng)
        image = scene.render()
        for rect in scene.rectangles:
            detections = ground(image, rect.label, detector, SelectionPolicy())
            boxes = [(d.box.top, d.box.left, d.box.height, d.box.width) for d in detections]
            assert (rect.top, rect.left, rect.height, rect.width) in boxes
            mask = compute_segmentation_mask(image, rect.label, detector, segmenter, SelectionPolicy())
            assert mask.sum() == sum(r.height * r.width for r in scene.rectangles if r.label == rect.label)
