"""Command-line driver.

Subcommands: ``edit`` (full pipeline run), ``mask`` (stop after masking and
emit the mask images), ``rerun`` (child run with overrides), ``serve``
(HTTP service), ``selftest`` (offline end-to-end invariant check).  Exit
codes: 0 success, 1 run failure (stage on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import tempfile
from pathlib import Path

import numpy as np

from maskedit.config import AppConfig, load_config
from maskedit.errors import MaskeditError
from maskedit.language import Instruction
from maskedit.pipeline import (
    EditRequest,
    RequestOverrides,
    Runtime,
    compute_mask_preview,
    load_image,
    rerun_with_overrides,
    run_edit,
    save_image,
)
from maskedit.runstore import EditRun


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file (YAML or JSON)")
    parser.add_argument("--backend-profile", dest="profile", choices=("mock", "local", "remote"))
    parser.add_argument("--out", help="runs root directory (default from config)")


def _add_edit_params(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--encoding-ratio", type=float, dest="encoding_ratio")
    parser.add_argument("--theta", type=float)
    parser.add_argument("--mask-source", dest="mask_source", choices=("segmenter", "diffedit"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--use-describer", action="store_true", default=None, dest="use_describer")
    parser.add_argument("--paste-back", action="store_true", default=None, dest="pixel_paste_back")
    parser.add_argument("--debug-artifacts", action="store_true", default=None, dest="debug_artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskedit", description="instruction-driven mask-guided image editing")
    sub = parser.add_subparsers(dest="command", required=True)

    p_edit = sub.add_parser("edit", help="run the full pipeline on one image")
    p_edit.add_argument("--image", required=True)
    p_edit.add_argument("--instruction", required=True)
    _add_edit_params(p_edit)
    _add_common(p_edit)

    p_mask = sub.add_parser("mask", help="stop after masking; emit soft mask, binary mask, overlay")
    p_mask.add_argument("--image", required=True)
    p_mask.add_argument("--instruction", required=True)
    p_mask.add_argument("--mask-out", default="mask_out", help="directory for the mask images")
    _add_edit_params(p_mask)
    _add_common(p_mask)

    p_rerun = sub.add_parser("rerun", help="create a child run with overrides")
    p_rerun.add_argument("--run", required=True, dest="run_id")
    p_rerun.add_argument("--instruction")
    _add_edit_params(p_rerun)
    _add_common(p_rerun)

    p_serve = sub.add_parser("serve", help="launch the HTTP service")
    p_serve.add_argument("--port", type=int)
    p_serve.add_argument("--host")
    _add_common(p_serve)

    p_self = sub.add_parser("selftest", help="offline end-to-end check with mock backends")
    p_self.add_argument("--keep", help="keep artifacts in this directory instead of a temp dir")
    _add_common(p_self)

    return parser


def _runtime_from_args(args: argparse.Namespace) -> Runtime:
    config = load_config(args.config, profile=args.profile)
    return Runtime(config, runs_root=args.out)


def _overrides_from_args(args: argparse.Namespace) -> RequestOverrides:
    names = (
        "encoding_ratio",
        "theta",
        "mask_source",
        "seed",
        "use_describer",
        "pixel_paste_back",
        "debug_artifacts",
    )
    return RequestOverrides(**{name: getattr(args, name, None) for name in names})


def _report_run(run: EditRun) -> int:
    if run.status != "done":
        stage = (run.error or {}).get("stage", "?")
        message = (run.error or {}).get("message", "unknown failure")
        print(f"run {run.id} failed at stage {stage}: {message}", file=sys.stderr)
        return 1
    print(f"run {run.id}: done")
    for name in sorted(run.artifacts):
        print(f"  {name}: {run.artifact_path(name)}")
    for key, value in sorted(run.metrics.items()):
        if isinstance(value, (int, float)):
            print(f"  metric {key}: {value:.6g}")
    return 0


def _cmd_edit(args: argparse.Namespace) -> int:
    runtime = _runtime_from_args(args)
    request = EditRequest(
        image_ref=Path(args.image),
        instruction=Instruction(args.instruction),
        overrides=_overrides_from_args(args),
    )
    return _report_run(run_edit(request, runtime))


def _cmd_mask(args: argparse.Namespace) -> int:
    runtime = _runtime_from_args(args)
    request = EditRequest(
        image_ref=Path(args.image),
        instruction=Instruction(args.instruction),
        overrides=_overrides_from_args(args),
    )
    from maskedit.pipeline import encode_gray_png

    preview = compute_mask_preview(request, runtime)
    out = Path(args.mask_out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"segmentation prompt: {preview.prompts.segmentation_prompt}")
    print(f"input caption:  {preview.prompts.input_caption}")
    print(f"edited caption: {preview.prompts.edited_caption}")
    if preview.soft is not None:
        (out / "soft_mask.png").write_bytes(encode_gray_png(preview.soft.values))
        np.save(out / "soft_mask.npy", preview.soft.values)
    (out / "mask.png").write_bytes(encode_gray_png(preview.pixel_mask.astype(np.float64)))
    save_image(preview.overlay, out / "mask_overlay.png")
    print(f"mask artifacts written to {out}")
    return 0


def _cmd_rerun(args: argparse.Namespace) -> int:
    runtime = _runtime_from_args(args)
    overrides_dict = _overrides_from_args(args).fields_set()
    if args.instruction:
        overrides_dict["instruction"] = args.instruction
    run = rerun_with_overrides(args.run_id, RequestOverrides(**overrides_dict), runtime)
    return _report_run(run)


def _cmd_serve(args: argparse.Namespace) -> int:
    from dataclasses import replace

    from maskedit.service import serve

    config = load_config(args.config, profile=args.profile)
    if args.port is not None or args.host is not None:
        service = replace(
            config.service,
            **({"port": args.port} if args.port is not None else {}),
            **({"host": args.host} if args.host is not None else {}),
        )
        config = replace(config, service=service)
    if args.out:
        config = replace(config, runs_root=Path(args.out))
    serve(config)
    return 0


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _cmd_selftest(args: argparse.Namespace) -> int:
    """Mock-backend end-to-end check; nonzero exit on any invariant violation."""
    from maskedit.estimators import ToyLinearEstimator
    from maskedit.scheduler import LatentState, ddim_denoise_step, geometric_schedule, invert_to_ratio
    from maskedit.synthetic import demo_scene, sidecar_path

    failures: list[str] = []

    def check(name: str, ok: bool, detail: str = "") -> None:
        line = f"selftest {name}: {'PASS' if ok else 'FAIL'}"
        if detail and not ok:
            line += f" ({detail})"
        print(line)
        if not ok:
            failures.append(name)

    # Scheduler roundtrip with a constant-in-x estimator is exact.
    schedule = geometric_schedule(16, 0.9)
    estimator = ToyLinearEstimator(gain=0.0, caption_bias={"probe": 0.25})
    rng = np.random.default_rng(3)
    x0 = LatentState(rng.standard_normal((2, 4, 4)), 0)
    trajectory = invert_to_ratio(x0, estimator, "probe", 1.0, schedule)
    state = trajectory.final
    while state.t > 0:
        state = ddim_denoise_step(state, estimator, "probe", schedule)
    roundtrip_err = float(np.max(np.abs(state.data - x0.data)))
    check("ddim-roundtrip", roundtrip_err < 1e-9, f"max abs err {roundtrip_err:.3e}")

    base = Path(args.keep) if args.keep else Path(tempfile.mkdtemp(prefix="maskedit-selftest-"))
    base.mkdir(parents=True, exist_ok=True)
    scene = demo_scene()
    image_path = base / "demo.png"
    save_image(scene.render(), image_path)
    scene.save(sidecar_path(image_path))

    request = EditRequest(
        image_ref=image_path,
        instruction=Instruction("Change the red square to a blue square"),
        overrides=RequestOverrides(seed=7, pixel_paste_back=True),
    )
    runs: list[EditRun] = []
    for attempt in range(2):
        config = load_config(args.config, profile=args.profile or "mock")
        runtime = Runtime(config, runs_root=base / f"runs_{attempt}")
        runs.append(run_edit(request, runtime))

    check("run-status", all(r.status == "done" for r in runs), f"statuses {[r.status for r in runs]}")
    if failures:
        return 1

    for name in ("edited", "mask", "mask_overlay"):
        hashes = {r.artifact_sha256(name) for r in runs}
        check(f"deterministic-{name}", len(hashes) == 1, f"hashes differ: {hashes}")

    run = runs[0]
    rect = scene.rectangles[0]
    expected = np.zeros((scene.height, scene.width), dtype=bool)
    expected[rect.top : rect.top + rect.height, rect.left : rect.left + rect.width] = True
    mask = np.array(load_image(run.artifact_path("mask"))[0] > 0.5)
    check("mask-geometry", bool(np.array_equal(mask, expected)))

    input_img = load_image(run.artifact_path("input"))
    edited_img = load_image(run.artifact_path("edited"))
    outside = ~expected
    out_l2 = float(np.mean((input_img - edited_img)[:, outside] ** 2))
    check("out-of-mask-l2", out_l2 == 0.0, f"got {out_l2}")
    check("metrics-out-of-mask", run.metrics.get("out_of_mask_l2") == 0.0, str(run.metrics))
    check("in-mask-change", run.metrics.get("in_mask_change_ratio", 0.0) > 0.0, str(run.metrics))

    required = {"input", "transcript", "mask", "mask_array", "mask_overlay", "edited"}
    check("run-directory-complete", required.issubset(run.artifacts), f"artifacts {sorted(run.artifacts)}")

    return 1 if failures else 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "edit": _cmd_edit,
        "mask": _cmd_mask,
        "rerun": _cmd_rerun,
        "serve": _cmd_serve,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except MaskeditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
