"""Pipeline orchestration: instruction -> prompts -> mask -> edit -> artifacts.

``run_edit`` drives the stages and persists everything into a run
directory; ``rerun_with_overrides`` creates provenance-linked child runs
that reuse persisted prompts and masks where the overrides permit (a theta
change re-binarizes the stored soft mask; an encoding-ratio change reuses
the stored binary mask and re-runs only the editing stage).
"""

from __future__ import annotations

import io
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from maskedit import diffedit as diffedit_mask
from maskedit.config import AppConfig, RunDefaults
from maskedit.editor import EditConfig, mask_guided_edit
from maskedit.errors import (
    CodecError,
    MaskeditError,
    NeedsChatBackendError,
    StageError,
)
from maskedit.language import (
    Instruction,
    ParsedPrompts,
    SceneDescription,
    build_task_prompt,
    describe_image,
    fallback_parse,
    parse_llm_response,
)
from maskedit.metrics import build_report
from maskedit.registry import BackendRegistry, default_registry
from maskedit.runstore import EditRun, RunStore, RunWriter
from maskedit.scheduler import LatentState
from maskedit.segmenter import SelectionPolicy, compute_segmentation_mask
from maskedit.synthetic import sidecar_path

logger = logging.getLogger(__name__)

MASK_SOURCES = ("segmenter", "diffedit")


# ---------------------------------------------------------------------------
# image I/O


def load_image(ref: str | Path | bytes) -> np.ndarray:
    """Decode an image file or raw bytes into a [3, H, W] float array in [0, 1]."""
    try:
        if isinstance(ref, bytes):
            pil = Image.open(io.BytesIO(ref))
        else:
            pil = Image.open(Path(ref))
        pil = pil.convert("RGB")
        pil.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise CodecError(f"cannot decode image {ref if not isinstance(ref, bytes) else '<bytes>'}: {exc}") from exc
    array = np.asarray(pil, dtype=np.float64) / 255.0
    return array.transpose(2, 0, 1)


def encode_png(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise CodecError(f"image must be [3, H, W], got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise CodecError("image values must lie in [0, 1] before saving")
    quantized = np.round(image * 255.0).astype(np.uint8).transpose(1, 2, 0)
    buffer = io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()


def encode_gray_png(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    quantized = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(quantized, mode="L").save(buffer, format="PNG")
    return buffer.getvalue()


def save_image(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise CodecError(f"unsupported output format {path.suffix!r}; use .png")
    path.write_bytes(encode_png(image))
    return path


# ---------------------------------------------------------------------------
# settings


@dataclass(frozen=True)
class RequestOverrides:
    """Per-request parameter overrides; None means "use the configured default"."""

    encoding_ratio: float | None = None
    theta: float | None = None
    mask_source: str | None = None
    seed: int | None = None
    score_threshold: float | None = None
    max_instances: int | None = None
    n_noise_samples: int | None = None
    noising_ratio: float | None = None
    smoothing_radius: int | None = None
    ddim_steps: int | None = None
    pixel_paste_back: bool | None = None
    use_describer: bool | None = None
    debug_artifacts: bool | None = None
    instruction: str | None = None

    def fields_set(self) -> dict:
        return {f.name: v for f in fields(self) if (v := getattr(self, f.name)) is not None}


@dataclass(frozen=True)
class ResolvedSettings(RunDefaults):
    """Full parameter snapshot for one run, persisted in the manifest."""

    profile: str = "mock"
    backends: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mask_source not in MASK_SOURCES:
            raise MaskeditError(f"mask_source must be one of {MASK_SOURCES}, got {self.mask_source!r}")
        if not 0.0 < self.encoding_ratio <= 1.0:
            raise MaskeditError(f"encoding_ratio must lie in (0, 1], got {self.encoding_ratio}")
        if not 0.0 < self.theta < 1.0:
            raise MaskeditError(f"theta must lie in (0, 1), got {self.theta}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ResolvedSettings":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in known})

    def mask_estimate_config(self) -> diffedit_mask.MaskEstimateConfig:
        return diffedit_mask.MaskEstimateConfig(
            theta=self.theta,
            n_noise_samples=self.n_noise_samples,
            noising_ratio=self.noising_ratio,
            smoothing_radius=self.smoothing_radius,
        )

    def edit_config(self) -> EditConfig:
        return EditConfig(
            encoding_ratio=self.encoding_ratio,
            ddim_steps=self.ddim_steps,
            seed=self.seed,
            pixel_paste_back=self.pixel_paste_back,
            debug_artifacts=self.debug_artifacts,
        )

    def selection_policy(self) -> SelectionPolicy:
        return SelectionPolicy(score_threshold=self.score_threshold, max_instances=self.max_instances)


@dataclass(frozen=True)
class EditRequest:
    image_ref: Path | bytes
    instruction: Instruction
    overrides: RequestOverrides = field(default_factory=RequestOverrides)


class Runtime:
    """Resolved configuration plus lazily constructed backends and the run store."""

    def __init__(self, config: AppConfig, registry: BackendRegistry | None = None, runs_root: str | Path | None = None):
        import threading

        self.config = config
        self.registry = registry or default_registry()
        self.runstore = RunStore(runs_root or config.runs_root)
        self.schedule = config.schedule.build()
        self._backends: dict[str, object] = {}
        self._backend_lock = threading.Lock()

    def backend(self, kind: str):
        with self._backend_lock:
            if kind not in self._backends:
                name = getattr(self.config.backends, kind)
                backend = self.registry.create(kind, name, self.config)
                if kind == "estimator" and not getattr(backend, "reentrant", True):
                    from maskedit.estimators import SerializedEstimator

                    backend = SerializedEstimator(backend)
                self._backends[kind] = backend
            return self._backends[kind]

    def resolve_settings(self, overrides: RequestOverrides) -> ResolvedSettings:
        base = ResolvedSettings(
            **asdict(self.config.defaults),
            profile=self.config.profile,
            backends=self.config.backends.as_dict(),
            schedule={
                "kind": self.config.schedule.kind,
                "total_steps": self.config.schedule.total_steps,
                "decay": self.config.schedule.decay,
                "hash": self.schedule.content_hash(),
            },
        )
        changed = {k: v for k, v in overrides.fields_set().items() if k != "instruction"}
        return replace(base, **changed) if changed else base


@contextmanager
def _timed(writer: RunWriter, stage: str):
    start = time.perf_counter()
    yield
    writer.record_timing(stage, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# reuse planning for reruns


@dataclass
class ReusePlan:
    prompts: dict | None = None
    description: dict | None = None
    soft_from: EditRun | None = None
    binary_from: EditRun | None = None


@dataclass
class PreparedRun:
    writer: RunWriter
    image: np.ndarray
    instruction: Instruction
    settings: ResolvedSettings
    reuse: ReusePlan = field(default_factory=ReusePlan)


# ---------------------------------------------------------------------------
# stages


def _parsing_stage(prepared: PreparedRun, runtime: Runtime) -> tuple[ParsedPrompts, SceneDescription | None]:
    writer, settings = prepared.writer, prepared.settings
    transcript: list[dict] = []

    if prepared.reuse.prompts is not None:
        prompts_dict = dict(prepared.reuse.prompts)
        prompts = ParsedPrompts(
            segmentation_prompt=prompts_dict["segmentation_prompt"],
            input_caption=prompts_dict["input_caption"],
            edited_caption=prompts_dict["edited_caption"],
        )
        description = None
        if prepared.reuse.description:
            description = SceneDescription(**prepared.reuse.description)
        transcript.append({"role": "reuse", "note": "prompts reused from parent run"})
        writer.add_json_artifact("transcript", "transcript.json", transcript)
        writer.record(
            prompts={**prompts_dict, "source": "reused"},
            description=dict(prepared.reuse.description) if prepared.reuse.description else None,
        )
        return prompts, description

    description: SceneDescription | None = None
    if settings.use_describer:
        describer = runtime.backend("describer")
        description = describe_image(prepared.image, describer)
        if description is None:
            transcript.append({"role": "describer", "note": "describer failed; continuing without description"})
        else:
            transcript.append({"role": "describer", "kind": description.kind, "text": description.text})

    prompt_text = build_task_prompt(prepared.instruction, description)
    source = "chat"
    try:
        chat = runtime.backend("chat")
        response = chat.complete(prompt_text)
        transcript.append({"role": "chat", "prompt": prompt_text, "response": response})
        prompts = parse_llm_response(response)
    except Exception as chat_exc:
        transcript.append({"role": "chat", "prompt": prompt_text, "error": str(chat_exc)})
        try:
            prompts = fallback_parse(prepared.instruction)
            source = "fallback"
            transcript.append({"role": "fallback", "note": "rule parser used after chat/parse failure"})
        except NeedsChatBackendError:
            writer.add_json_artifact("transcript", "transcript.json", transcript)
            raise chat_exc

    writer.add_json_artifact("transcript", "transcript.json", transcript)
    writer.record(
        prompts={
            "segmentation_prompt": prompts.segmentation_prompt,
            "input_caption": prompts.input_caption,
            "edited_caption": prompts.edited_caption,
            "source": source,
        },
        description={"kind": description.kind, "text": description.text} if description else None,
    )
    return prompts, description


@dataclass
class MaskBundle:
    pixel_mask: np.ndarray
    latent_mask: np.ndarray
    soft: diffedit_mask.SoftMask | None
    source: str


def _persist_masks(writer: RunWriter, image: np.ndarray, bundle: MaskBundle) -> None:
    if bundle.soft is not None:
        writer.add_array_artifact("soft_mask_array", "soft_mask.npy", bundle.soft.values)
        writer.add_artifact_bytes("soft_mask", "soft_mask.png", encode_gray_png(bundle.soft.values))
    writer.add_array_artifact("mask_array", "mask.npy", bundle.latent_mask)
    writer.add_artifact_bytes("mask", "mask.png", encode_gray_png(bundle.pixel_mask.astype(np.float64)))
    overlay = diffedit_mask.overlay_mask(image, bundle.pixel_mask)
    writer.add_artifact_bytes("mask_overlay", "mask_overlay.png", encode_png(overlay))
    writer.record(
        mask={
            "source": bundle.source,
            "pixel_shape": list(bundle.pixel_mask.shape),
            "latent_shape": list(bundle.latent_mask.shape),
            "area_fraction": float(bundle.pixel_mask.mean()),
        }
    )


def _masking_stage(
    prepared: PreparedRun,
    runtime: Runtime,
    prompts: ParsedPrompts,
    x_0: LatentState,
) -> MaskBundle:
    writer, settings, image = prepared.writer, prepared.settings, prepared.image
    pixel_hw = image.shape[1:]
    latent_hw = x_0.shape[1:]
    reuse = prepared.reuse

    if reuse.binary_from is not None:
        parent = reuse.binary_from
        if "soft_mask_array" in parent.artifacts:
            writer.copy_artifact_from(parent, "soft_mask_array")
            writer.copy_artifact_from(parent, "soft_mask")
        writer.copy_artifact_from(parent, "mask_array")
        writer.copy_artifact_from(parent, "mask")
        writer.copy_artifact_from(parent, "mask_overlay")
        latent_mask = np.load(writer.path / "mask.npy")
        pixel_mask = diffedit_mask.resize_mask(latent_mask, pixel_hw)
        source = (parent.mask_info or {}).get("source", settings.mask_source)
        writer.record(mask=dict(parent.mask_info or {}))
        return MaskBundle(pixel_mask=pixel_mask, latent_mask=latent_mask, soft=None, source=source)

    if reuse.soft_from is not None:
        parent = reuse.soft_from
        writer.copy_artifact_from(parent, "soft_mask_array")
        writer.copy_artifact_from(parent, "soft_mask")
        soft = diffedit_mask.SoftMask(np.load(writer.path / "soft_mask.npy"), source="diffedit")
        latent_mask = diffedit_mask.binarize_mask(soft, settings.theta)
        pixel_mask = diffedit_mask.resize_mask(latent_mask, pixel_hw)
        bundle = MaskBundle(pixel_mask=pixel_mask, latent_mask=latent_mask, soft=None, source="diffedit")
        writer.add_array_artifact("mask_array", "mask.npy", latent_mask)
        writer.add_artifact_bytes("mask", "mask.png", encode_gray_png(pixel_mask.astype(np.float64)))
        overlay = diffedit_mask.overlay_mask(image, pixel_mask)
        writer.add_artifact_bytes("mask_overlay", "mask_overlay.png", encode_png(overlay))
        writer.record(
            mask={
                "source": "diffedit",
                "pixel_shape": list(pixel_mask.shape),
                "latent_shape": list(latent_mask.shape),
                "area_fraction": float(pixel_mask.mean()),
            }
        )
        return bundle

    if prompts.needs_full_image_mask:
        writer.add_warning(
            "segmentation prompt is 'None needed'; editing the whole frame usually degrades fidelity"
        )
        pixel_mask = np.ones(pixel_hw, dtype=bool)
        latent_mask = np.ones(latent_hw, dtype=bool)
        bundle = MaskBundle(pixel_mask=pixel_mask, latent_mask=latent_mask, soft=None, source="full-image")
    elif settings.mask_source == "segmenter":
        detector = runtime.backend("detector")
        segmenter_model = runtime.backend("segmenter")
        pixel_mask = compute_segmentation_mask(
            image, prompts.segmentation_prompt, detector, segmenter_model, settings.selection_policy()
        )
        latent_mask = diffedit_mask.resize_mask(pixel_mask, latent_hw)
        bundle = MaskBundle(pixel_mask=pixel_mask, latent_mask=latent_mask, soft=None, source="segmenter")
    else:
        estimator = runtime.backend("estimator")
        soft = diffedit_mask.estimate_soft_mask(
            x_0,
            prompts.input_caption,
            prompts.edited_caption,
            settings.mask_estimate_config(),
            estimator,
            runtime.schedule,
            rng_seed=settings.seed,
        )
        latent_mask = diffedit_mask.binarize_mask(soft, settings.theta)
        pixel_mask = diffedit_mask.resize_mask(latent_mask, pixel_hw)
        bundle = MaskBundle(pixel_mask=pixel_mask, latent_mask=latent_mask, soft=soft, source="diffedit")

    _persist_masks(writer, image, bundle)
    return bundle


def _editing_stage(
    prepared: PreparedRun,
    runtime: Runtime,
    prompts: ParsedPrompts,
    x_0: LatentState,
    bundle: MaskBundle,
) -> np.ndarray:
    writer, settings, image = prepared.writer, prepared.settings, prepared.image
    estimator = runtime.backend("estimator")
    codec = runtime.backend("codec")

    on_step = None
    if settings.debug_artifacts:
        debug_dir = writer.path / "debug"
        debug_dir.mkdir(exist_ok=True)

        def on_step(t: int, blended: np.ndarray) -> None:
            np.save(debug_dir / f"latent_t{t:04d}.npy", blended)

    edited_latent, _ = mask_guided_edit(
        x_0,
        bundle.latent_mask,
        prompts.input_caption,
        prompts.edited_caption,
        settings.edit_config(),
        estimator,
        runtime.schedule,
        on_step=on_step,
    )
    edited = np.clip(codec.decode(edited_latent.data), 0.0, 1.0)
    if edited.shape != image.shape:
        raise MaskeditError(f"decoded image shape {edited.shape} does not match input {image.shape}")
    if settings.pixel_paste_back:
        edited = np.where(bundle.pixel_mask[None, :, :], edited, image)
    writer.add_artifact_bytes("edited", "edited.png", encode_png(edited))
    return edited


def execute_run(prepared: PreparedRun, runtime: Runtime) -> EditRun:
    """Drive the stages; failures are recorded, not raised."""
    writer = prepared.writer
    stage = "parsing"
    try:
        writer.set_status("parsing")
        with _timed(writer, "parsing"):
            prompts, _ = _parsing_stage(prepared, runtime)

        stage = "masking"
        writer.set_status("masking")
        with _timed(writer, "masking"):
            codec = runtime.backend("codec")
            x_0 = LatentState(codec.encode(prepared.image), t=0)
            bundle = _masking_stage(prepared, runtime, prompts, x_0)

        stage = "editing"
        writer.set_status("editing")
        with _timed(writer, "editing"):
            edited = _editing_stage(prepared, runtime, prompts, x_0, bundle)
            report = build_report(
                prepared.image,
                edited,
                bundle.pixel_mask,
                input_caption=prompts.input_caption,
                edited_caption=prompts.edited_caption,
                instruction=prepared.instruction.text,
                eps=prepared.settings.metric_eps,
            )
            writer.record(metrics=report.to_dict())

        writer.finish_done()
    except Exception as exc:
        logger.warning("run %s failed at stage %s: %s", writer.run_id, stage, exc)
        writer.finish_failed(stage, str(exc))
    return runtime.runstore.read(writer.run_id)


def prepare_run(request: EditRequest, runtime: Runtime) -> PreparedRun:
    """Validate the request, create the run directory, persist the input."""
    image = load_image(request.image_ref)
    settings = runtime.resolve_settings(request.overrides)
    writer = runtime.runstore.create_run()
    writer.add_artifact_bytes("input", "input.png", encode_png(image))
    if isinstance(request.image_ref, (str, Path)):
        sidecar = sidecar_path(request.image_ref)
        if sidecar.exists():
            writer.add_artifact_bytes("geometry", "input.geometry.json", sidecar.read_bytes())
    writer.record(instruction=request.instruction.text, settings=settings.to_dict())
    return PreparedRun(writer=writer, image=image, instruction=request.instruction, settings=settings)


def run_edit(request: EditRequest, runtime: Runtime) -> EditRun:
    """Execute the full pipeline for one request; returns the persisted run."""
    return execute_run(prepare_run(request, runtime), runtime)


# ---------------------------------------------------------------------------
# reruns


def _merge_settings(parent_settings: ResolvedSettings, overrides: RequestOverrides) -> ResolvedSettings:
    changed = {k: v for k, v in overrides.fields_set().items() if k != "instruction"}
    return replace(parent_settings, **changed) if changed else parent_settings


def prepare_rerun(run_id: str, overrides: RequestOverrides, runtime: Runtime) -> PreparedRun:
    """Plan a child run: decide what to reuse from the parent, copy the input."""
    parent = runtime.runstore.read(run_id)
    if parent.prompts is None:
        raise MaskeditError(f"run {run_id} did not complete parsing; a fresh edit is required")
    parent_settings = ResolvedSettings.from_dict(parent.settings)
    settings = _merge_settings(parent_settings, overrides)

    instruction = Instruction(overrides.instruction) if overrides.instruction else Instruction(parent.instruction)
    image = load_image(parent.artifact_path("input"))

    reuse = ReusePlan()
    prompts_reusable = overrides.instruction is None and settings.use_describer == parent_settings.use_describer
    if prompts_reusable:
        reuse.prompts = {k: v for k, v in parent.prompts.items() if k != "source"}
        reuse.description = parent.description

    parent_mask_source = (parent.mask_info or {}).get("source")
    mask_params_same = all(
        getattr(settings, name) == getattr(parent_settings, name)
        for name in ("n_noise_samples", "noising_ratio", "smoothing_radius", "seed")
    )
    policy_same = all(
        getattr(settings, name) == getattr(parent_settings, name)
        for name in ("score_threshold", "max_instances")
    )
    if prompts_reusable and parent_mask_source is not None:
        if parent_mask_source == "diffedit" and settings.mask_source == "diffedit" and mask_params_same:
            if "soft_mask_array" in parent.artifacts:
                if settings.theta == parent_settings.theta and "mask_array" in parent.artifacts:
                    reuse.binary_from = parent
                else:
                    reuse.soft_from = parent
        elif (
            parent_mask_source in ("segmenter", "full-image")
            and settings.mask_source == parent_settings.mask_source
            and policy_same
            and "mask_array" in parent.artifacts
        ):
            reuse.binary_from = parent

    writer = runtime.runstore.create_run(parent_id=parent.id)
    writer.add_artifact_bytes("input", "input.png", parent.artifact_path("input").read_bytes())
    if "geometry" in parent.artifacts:
        writer.copy_artifact_from(parent, "geometry")
    writer.record(instruction=instruction.text, settings=settings.to_dict())
    return PreparedRun(writer=writer, image=image, instruction=instruction, settings=settings, reuse=reuse)


def rerun_with_overrides(run_id: str, overrides: RequestOverrides, runtime: Runtime) -> EditRun:
    return execute_run(prepare_rerun(run_id, overrides, runtime), runtime)


# ---------------------------------------------------------------------------
# mask preview (CLI `mask` subcommand)


@dataclass
class MaskPreview:
    prompts: ParsedPrompts
    soft: diffedit_mask.SoftMask | None
    pixel_mask: np.ndarray
    overlay: np.ndarray


def compute_mask_preview(request: EditRequest, runtime: Runtime) -> MaskPreview:
    """Parsing + masking without persisting a run; used for mask inspection."""
    image = load_image(request.image_ref)
    settings = runtime.resolve_settings(request.overrides)

    description = None
    if settings.use_describer:
        description = describe_image(image, runtime.backend("describer"))
    prompt_text = build_task_prompt(request.instruction, description)
    try:
        prompts = parse_llm_response(runtime.backend("chat").complete(prompt_text))
    except Exception:
        prompts = fallback_parse(request.instruction)

    soft = None
    if prompts.needs_full_image_mask:
        pixel_mask = np.ones(image.shape[1:], dtype=bool)
    elif settings.mask_source == "segmenter":
        pixel_mask = compute_segmentation_mask(
            image,
            prompts.segmentation_prompt,
            runtime.backend("detector"),
            runtime.backend("segmenter"),
            settings.selection_policy(),
        )
    else:
        codec = runtime.backend("codec")
        x_0 = LatentState(codec.encode(image), t=0)
        soft = diffedit_mask.estimate_soft_mask(
            x_0,
            prompts.input_caption,
            prompts.edited_caption,
            settings.mask_estimate_config(),
            runtime.backend("estimator"),
            runtime.schedule,
            rng_seed=settings.seed,
        )
        latent_mask = diffedit_mask.binarize_mask(soft, settings.theta)
        pixel_mask = diffedit_mask.resize_mask(latent_mask, image.shape[1:])
    overlay = diffedit_mask.overlay_mask(image, pixel_mask)
    return MaskPreview(prompts=prompts, soft=soft, pixel_mask=pixel_mask, overlay=overlay)
