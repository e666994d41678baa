"""Acceptance suite: every criterion runs offline against mock backends and
prints one PASS line (pytest -v -s shows them).  Tolerances are pinned here,
not configurable."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from maskedit.cli import main as cli_main
from maskedit.config import load_config
from maskedit.diffedit import MaskEstimateConfig, SoftMask, binarize_mask, estimate_soft_mask
from maskedit.editor import EditConfig, mask_guided_edit
from maskedit.errors import ObjectNotFoundError
from maskedit.estimators import HashedCaptionEstimator, RegionToyEstimator, ToyLinearEstimator
from maskedit.language import (
    DEFAULT_TEMPLATE,
    Instruction,
    ParsedPrompts,
    ScriptedChatClient,
    build_task_prompt,
    format_prompts_response,
    parse_llm_response,
)
from maskedit.pipeline import Runtime, encode_png
from maskedit.scheduler import (
    LatentState,
    ddim_denoise_step,
    ddim_invert_step,
    generate,
    geometric_schedule,
    invert_to_ratio,
    predicted_x0,
    NoiseSchedule,
)
from maskedit.segmenter import SelectionPolicy, compute_segmentation_mask, ground
from maskedit.service import ApiRun, create_app
from maskedit.synthetic import BoxFillSegmenter, PaletteDetector, Rectangle, SceneGeometry, demo_scene, random_scene

DATA = Path(__file__).parent / "data"


def _ok(name: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS", flush=True)


# ---------------------------------------------------------------------------


def test_ddim_roundtrip():
    """Invert k then denoise k reproduces x_0 (< 1e-9) for T in {8, 64}, all k."""
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    # exactness requires a state-independent prediction: zero gain, caption bias only
    estimator = ToyLinearEstimator(gain=0.0, caption_bias={"caption under test": 0.35})
    for total_steps in (8, 64):
        schedule = geometric_schedule(total_steps, 0.98)
        x0 = LatentState(rng.standard_normal((4, 8, 8)), 0)
        for k in range(1, total_steps + 1):
            state = x0
            for _ in range(k):
                state = ddim_invert_step(state, estimator, "caption under test", schedule)
            for _ in range(k):
                state = ddim_denoise_step(state, estimator, "caption under test", schedule)
            error = float(np.max(np.abs(state.data - x0.data)))
            assert error < 1e-9, f"T={total_steps}, k={k}: max-abs error {error}"
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"roundtrip suite took {elapsed:.2f}s"
    _ok("ddim-roundtrip")


def test_f_theta_decomposition_identity():
    """sqrt(abar)*f + sqrt(1-abar)*eps == x_t within 1e-12 for 1000 random triples."""
    rng = np.random.default_rng(202)
    for _ in range(1000):
        alpha = float(rng.uniform(0.01, 1.0))
        schedule = NoiseSchedule(np.array([1.0, alpha]), validate=False)
        x_t = LatentState(rng.standard_normal((2, 4, 4)), 1)
        eps = rng.standard_normal((2, 4, 4))
        x0_hat = predicted_x0(x_t, eps, schedule)
        recon = np.sqrt(alpha) * x0_hat + np.sqrt(1.0 - alpha) * eps
        assert np.max(np.abs(recon - x_t.data)) < 1e-12
    _ok("f-theta-decomposition")


def _random_toy_estimator(rng, shape):
    kind = rng.integers(0, 3)
    if kind == 0:
        return ToyLinearEstimator(gain=float(rng.uniform(-0.5, 0.5)), caption_bias={"ci": 0.2, "ce": -0.1})
    if kind == 1:
        return HashedCaptionEstimator(amplitude=0.3)
    support = rng.random(shape[1:]) > 0.5
    return RegionToyEstimator(difference_support=support, delta=0.8, input_caption="ci", edited_caption="ce")


def test_out_of_mask_exactness():
    """Edited latent restricted to the mask complement is bitwise x_0 there."""
    rng = np.random.default_rng(303)
    schedule = geometric_schedule(8, 0.9)
    for _ in range(100):
        shape = (int(rng.integers(1, 4)), 6, 6)
        x0 = LatentState(rng.standard_normal(shape), 0)
        mask = rng.random((6, 6)) > rng.uniform(0.2, 0.8)
        ratio = float(rng.uniform(0.05, 1.0))
        estimator = _random_toy_estimator(rng, shape)
        edited, _ = mask_guided_edit(
            x0, mask, "ci", "ce", EditConfig(encoding_ratio=ratio), estimator, schedule
        )
        outside = ~mask
        assert np.array_equal(edited.data[:, outside], x0.data[:, outside])
    _ok("out-of-mask-exactness")


def test_full_mask_equivalence():
    """M=1 edit equals scheduler-only generation from x_r under the edited caption."""
    rng = np.random.default_rng(404)
    schedule = geometric_schedule(10, 0.92)
    estimator = ToyLinearEstimator(gain=0.3, caption_bias={"ci": 0.15, "ce": -0.2})
    x0 = LatentState(rng.standard_normal((3, 5, 5)), 0)
    mask = np.ones((5, 5), dtype=bool)
    for ratio in (0.3, 0.7, 1.0):
        edited, _ = mask_guided_edit(x0, mask, "ci", "ce", EditConfig(encoding_ratio=ratio), estimator, schedule)
        trajectory = invert_to_ratio(x0, estimator, "ci", ratio, schedule)
        oracle = generate(trajectory.final, estimator, "ce", schedule)
        assert np.array_equal(edited.data, oracle.data)
    _ok("full-mask-equivalence")


def test_diffedit_mask_support_recovery():
    """Left-half support recovered exactly for theta in {0.1, 0.5, 0.9}; identical
    captions give the zero mask; thresholding is monotone on 100 random masks."""
    rng = np.random.default_rng(505)
    schedule = geometric_schedule(8, 0.9)
    support = np.zeros((8, 8), dtype=bool)
    support[:, :4] = True
    estimator = RegionToyEstimator(difference_support=support, delta=0.7, input_caption="ci", edited_caption="ce")
    x0 = LatentState(rng.standard_normal((2, 8, 8)), 0)
    cfg = MaskEstimateConfig(n_noise_samples=4, smoothing_radius=0)
    soft = estimate_soft_mask(x0, "ci", "ce", cfg, estimator, schedule, rng_seed=1)
    for theta in (0.1, 0.5, 0.9):
        assert np.array_equal(binarize_mask(soft, theta), support)

    same = estimate_soft_mask(x0, "same", "same", cfg, ToyLinearEstimator(gain=0.4), schedule, rng_seed=2)
    assert np.array_equal(same.values, np.zeros((8, 8)))

    for _ in range(100):
        values = rng.random((6, 6))
        soft_random = SoftMask(values)
        t1, t2 = sorted(rng.uniform(0.01, 0.99, size=2))
        low, high = binarize_mask(soft_random, float(t1)), binarize_mask(soft_random, float(t2))
        assert np.all(~high | low)
    _ok("diffedit-support-recovery")


def test_segmenter_geometry_corpus():
    """20 synthetic scenes: boxes and areas recovered exactly; disjoint unions
    additive; absent phrases raise object-not-found."""
    rng = np.random.default_rng(606)
    detector = PaletteDetector()
    segmenter = BoxFillSegmenter()
    policy = SelectionPolicy()
    for _ in range(20):
        scene = random_scene(rng)
        image = scene.render()
        for rect in scene.rectangles:
            detections = ground(image, rect.label, detector, policy)
            boxes = {(d.box.top, d.box.left, d.box.height, d.box.width) for d in detections}
            assert (rect.top, rect.left, rect.height, rect.width) in boxes
            mask = compute_segmentation_mask(image, rect.label, detector, segmenter, policy)
            expected_area = sum(r.height * r.width for r in scene.rectangles if r.label == rect.label)
            assert mask.sum() == expected_area
        with pytest.raises(ObjectNotFoundError):
            compute_segmentation_mask(image, "nonexistent gadget", detector, segmenter, policy)

    # disjoint multi-instance union is exactly additive
    scene = SceneGeometry(
        height=64,
        width=64,
        rectangles=(
            Rectangle("red square", 2, 2, 9, 7, (1.0, 0.0, 0.0)),
            Rectangle("red square", 30, 40, 11, 13, (1.0, 0.0, 0.0)),
        ),
    )
    mask = compute_segmentation_mask(scene.render(), "red square", detector, segmenter, policy)
    assert mask.sum() == 9 * 7 + 11 * 13
    _ok("segmenter-geometry")


def test_language_golden_suite():
    """20+ instructions round-trip prompt -> scripted chat -> parse to the
    golden prompts; the shipped task-template example is byte-exact."""
    goldens = json.loads((DATA / "golden_instructions.json").read_text(encoding="utf-8"))
    assert len(goldens) >= 20
    covered = {g["instruction"].split()[0] for g in goldens}
    assert covered >= {"Change", "Turn", "Replace", "Make", "Color"}

    responses = {
        g["instruction"]: format_prompts_response(
            ParsedPrompts(g["segmentation_prompt"], g["input_caption"], g["edited_caption"])
        )
        for g in goldens
    }
    chat = ScriptedChatClient(responses=responses)
    for g in goldens:
        prompt = build_task_prompt(Instruction(g["instruction"]), None)
        parsed = parse_llm_response(chat.complete(prompt))
        assert parsed == ParsedPrompts(g["segmentation_prompt"], g["input_caption"], g["edited_caption"])

    template_example = (
        "For example, if the user says ``Change the dog to a cat'', you need to give the "
        "segmentation model only the keyword ``Dog''. You also need to give the image editing "
        "model two text prompts: ``Photo of a dog'', and ``Photo of a cat''. Your answer "
        "should be in the form of: Segmentation prompt: Dog. Editing prompt 1: ``Photo of a "
        "dog''. Editing prompt2: ``Photo of a cat''."
    )
    assert DEFAULT_TEMPLATE.task_examples[0] == template_example
    assert "Segmentation prompt: Dog." in template_example
    golden_prompt = (DATA / "task_prompt_golden.txt").read_text(encoding="utf-8")
    assert build_task_prompt(Instruction("Change the dog to a cat"), None) == golden_prompt
    _ok("language-golden-suite")


def test_end_to_end_selftest(tmp_path):
    """CLI selftest: full instruction->mask->edit run, byte-identical across two
    executions, out_of_mask_l2 == 0 with paste-back; under 30 s."""
    start = time.perf_counter()
    code = cli_main(["selftest", "--keep", str(tmp_path / "selftest")])
    elapsed = time.perf_counter() - start
    assert code == 0
    assert elapsed < 30.0, f"selftest took {elapsed:.2f}s"
    _ok("end-to-end-selftest")


def test_service_contract(tmp_path):
    """Submit/poll/rerun lifecycle with schema validation; theta-rerun reuses the
    soft mask byte-for-byte, r-rerun reuses the binary mask byte-for-byte."""
    config = load_config(None, profile="mock")
    runtime = Runtime(config, runs_root=tmp_path / "runs")
    png = encode_png(demo_scene().render())

    def wait_done(client, run_id):
        deadline = time.time() + 30
        while time.time() < deadline:
            response = client.get(f"/edits/{run_id}")
            assert response.status_code == 200
            body = response.json()
            ApiRun.model_validate(body)
            if body["status"] in ("done", "failed"):
                return body
            time.sleep(0.05)
        raise AssertionError("timeout")

    def sha(client, url):
        response = client.get(url)
        assert response.status_code == 200
        return hashlib.sha256(response.content).hexdigest()

    with TestClient(create_app(config, runtime)) as client:
        response = client.post(
            "/edits",
            files={"image": ("scene.png", png, "image/png")},
            data={"instruction": "Change the red square to a blue square", "mask_source": "diffedit", "seed": "5"},
        )
        assert response.status_code == 202
        parent = response.json()
        ApiRun.model_validate(parent)
        parent_body = wait_done(client, parent["id"])
        assert parent_body["status"] == "done"

        response = client.post(f"/edits/{parent['id']}/rerun", json={"theta": 0.6})
        assert response.status_code == 202
        theta_child = wait_done(client, response.json()["id"])
        assert theta_child["status"] == "done"
        assert sha(client, theta_child["artifacts"]["soft_mask_array"]) == sha(
            client, parent_body["artifacts"]["soft_mask_array"]
        )

        response = client.post(f"/edits/{parent['id']}/rerun", json={"encoding_ratio": 0.9})
        assert response.status_code == 202
        ratio_child = wait_done(client, response.json()["id"])
        assert ratio_child["status"] == "done"
        assert sha(client, ratio_child["artifacts"]["mask_array"]) == sha(
            client, parent_body["artifacts"]["mask_array"]
        )
        assert sha(client, ratio_child["artifacts"]["mask"]) == sha(client, parent_body["artifacts"]["mask"])

        assert client.post(f"/edits/{parent['id']}/rerun", json={"encoding_ratio": 1.2}).status_code == 422
        assert client.get("/edits/not-a-run").status_code == 404
    _ok("service-contract")
