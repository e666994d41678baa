"""HTTP+JSON interface over the pipeline.

Endpoints:

    POST /edits                     multipart image + instruction + overrides -> 202 run snapshot
    GET  /edits/{id}                current run snapshot (terminal snapshots are immutable)
    POST /edits/{id}/rerun          JSON overrides -> 202 child run snapshot
    GET  /edits/{id}/artifacts/{n}  artifact file (only once its stage completed)
    GET  /healthz                   liveness

Runs execute on a bounded worker pool; when the pool backlog is full the
service answers 429 with Retry-After instead of queueing unboundedly.
The built web UI, when present, is served under /ui.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Literal

from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from maskedit.config import AppConfig
from maskedit.errors import MaskeditError, UnknownRunError
from maskedit.language import Instruction
from maskedit.pipeline import EditRequest, RequestOverrides, Runtime, execute_run, prepare_rerun, prepare_run
from maskedit.runstore import EditRun

logger = logging.getLogger(__name__)


class ApiPrompts(BaseModel):
    segmentation_prompt: str
    input_caption: str
    edited_caption: str
    source: str


class ApiError(BaseModel):
    stage: str
    message: str


class ApiRun(BaseModel):
    """Wire view of a run; artifact URLs appear only once their stage completed."""

    id: str
    status: Literal["created", "parsing", "masking", "editing", "done", "failed"]
    parent_id: str | None = None
    created_at: str
    instruction: str | None = None
    prompts: ApiPrompts | None = None
    description: dict[str, str] | None = None
    artifacts: dict[str, str] = Field(default_factory=dict)
    timings: dict[str, float] = Field(default_factory=dict)
    metrics: dict[str, Any] = Field(default_factory=dict)
    mask: dict[str, Any] | None = None
    warnings: list[str] = Field(default_factory=list)
    error: ApiError | None = None


class RerunBody(BaseModel):
    theta: float | None = Field(default=None, gt=0.0, lt=1.0)
    encoding_ratio: float | None = Field(default=None, gt=0.0, le=1.0)
    mask_source: Literal["segmenter", "diffedit"] | None = None
    instruction: str | None = Field(default=None, min_length=1)
    seed: int | None = None


def api_run_from(run: EditRun) -> ApiRun:
    return ApiRun(
        id=run.id,
        status=run.status,
        parent_id=run.parent_id,
        created_at=run.created_at,
        instruction=run.instruction,
        prompts=ApiPrompts(**run.prompts) if run.prompts else None,
        description=run.description,
        artifacts={name: f"/edits/{run.id}/artifacts/{name}" for name in sorted(run.artifacts)},
        timings=run.timings,
        metrics=run.metrics,
        mask=run.mask_info,
        warnings=run.warnings,
        error=ApiError(**run.error) if run.error else None,
    )


class _Workers:
    """Bounded executor: rejects new work once the backlog hits max_pending."""

    def __init__(self, workers: int, max_pending: int):
        self.executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="maskedit-run")
        self.max_pending = max_pending
        self._pending = 0
        self._lock = threading.Lock()

    def try_submit(self, fn, *args) -> bool:
        with self._lock:
            if self._pending >= self.max_pending:
                return False
            self._pending += 1

        def wrapped():
            try:
                fn(*args)
            except Exception:
                logger.exception("background run crashed")
            finally:
                with self._lock:
                    self._pending -= 1

        self.executor.submit(wrapped)
        return True

    def shutdown(self) -> None:
        self.executor.shutdown(wait=True)


def create_app(config: AppConfig, runtime: Runtime | None = None) -> FastAPI:
    from contextlib import asynccontextmanager

    runtime = runtime or Runtime(config)
    workers = _Workers(config.service.workers, config.service.max_pending)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        workers.shutdown()

    app = FastAPI(title="maskedit", version="0.1.0", lifespan=lifespan)
    app.state.runtime = runtime
    app.state.workers = workers

    def busy_response() -> JSONResponse:
        return JSONResponse(
            status_code=429,
            content={"detail": "run queue is full; retry shortly"},
            headers={"Retry-After": "1"},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/edits", response_model=ApiRun, status_code=202)
    async def submit_edit(
        image: UploadFile = File(...),
        instruction: str = Form(...),
        encoding_ratio: float | None = Form(default=None),
        theta: float | None = Form(default=None),
        mask_source: Literal["segmenter", "diffedit"] | None = Form(default=None),
        seed: int | None = Form(default=None),
        use_describer: bool | None = Form(default=None),
        pixel_paste_back: bool | None = Form(default=None),
    ):
        if not instruction.strip():
            raise HTTPException(status_code=422, detail="field 'instruction' must be non-empty")
        payload = await image.read()
        if len(payload) > config.service.max_upload_bytes:
            raise HTTPException(
                status_code=413,
                detail=f"image exceeds the {config.service.max_upload_bytes} byte upload limit",
            )
        overrides = RequestOverrides(
            encoding_ratio=encoding_ratio,
            theta=theta,
            mask_source=mask_source,
            seed=seed,
            use_describer=use_describer,
            pixel_paste_back=pixel_paste_back,
        )
        try:
            request = EditRequest(image_ref=payload, instruction=Instruction(instruction), overrides=overrides)
            prepared = prepare_run(request, runtime)
        except MaskeditError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if not workers.try_submit(execute_run, prepared, runtime):
            prepared.writer.finish_failed("setup", "run queue full; request was not executed")
            return busy_response()
        return api_run_from(runtime.runstore.read(prepared.writer.run_id))

    @app.get("/edits/{run_id}", response_model=ApiRun)
    def get_run(run_id: str):
        try:
            return api_run_from(runtime.runstore.read(run_id))
        except UnknownRunError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/edits/{run_id}/rerun", response_model=ApiRun, status_code=202)
    def rerun(run_id: str, body: RerunBody):
        overrides = RequestOverrides(
            theta=body.theta,
            encoding_ratio=body.encoding_ratio,
            mask_source=body.mask_source,
            instruction=body.instruction,
            seed=body.seed,
        )
        try:
            prepared = prepare_rerun(run_id, overrides, runtime)
        except UnknownRunError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except MaskeditError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if not workers.try_submit(execute_run, prepared, runtime):
            prepared.writer.finish_failed("setup", "run queue full; request was not executed")
            return busy_response()
        return api_run_from(runtime.runstore.read(prepared.writer.run_id))

    @app.get("/edits/{run_id}/artifacts/{name}")
    def get_artifact(run_id: str, name: str):
        try:
            run = runtime.runstore.read(run_id)
        except UnknownRunError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if name not in run.artifacts:
            raise HTTPException(status_code=404, detail=f"artifact {name!r} not available at status {run.status!r}")
        return FileResponse(run.artifact_path(name))

    ui_dir = Path(config.service.ui_dir)
    if ui_dir.is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(config: AppConfig, runtime: Runtime | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(config, runtime), host=config.service.host, port=config.service.port)
