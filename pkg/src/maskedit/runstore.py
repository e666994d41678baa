"""Run persistence: one self-describing directory per pipeline execution.

Layout per run:

    runs/<id>/
      manifest.json      id, parent, status, prompts, settings, timings,
                         artifact index with sha256 per file, metrics
      input.png          the input image as received
      transcript.json    every chat/describer exchange for audit
      soft_mask.{npy,png}   contrast-mask path only
      mask.npy           binary mask at latent resolution
      mask.png           binary mask at pixel resolution
      mask_overlay.png   mask blended red over the input
      edited.png         final edited image
      debug/             optional per-step latents

Manifest and artifact writes are atomic (temp file + rename); status only
moves forward.
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from maskedit.errors import MaskeditError, UnknownRunError

STATUS_ORDER = ("created", "parsing", "masking", "editing", "done", "failed")
TERMINAL_STATUSES = ("done", "failed")


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.{secrets.token_hex(4)}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class EditRun:
    """Read-side view of one run directory."""

    id: str
    path: Path
    status: str
    parent_id: str | None
    created_at: str
    instruction: str | None
    prompts: dict | None
    description: dict | None
    settings: dict
    timings: dict[str, float]
    artifacts: dict[str, dict]
    metrics: dict
    mask_info: dict | None
    warnings: list[str]
    error: dict | None

    @classmethod
    def from_manifest(cls, path: Path, manifest: dict) -> "EditRun":
        return cls(
            id=manifest["id"],
            path=path,
            status=manifest["status"],
            parent_id=manifest.get("parent_id"),
            created_at=manifest.get("created_at", ""),
            instruction=manifest.get("instruction"),
            prompts=manifest.get("prompts"),
            description=manifest.get("description"),
            settings=manifest.get("settings", {}),
            timings=manifest.get("timings", {}),
            artifacts=manifest.get("artifacts", {}),
            metrics=manifest.get("metrics", {}),
            mask_info=manifest.get("mask"),
            warnings=manifest.get("warnings", []),
            error=manifest.get("error"),
        )

    def artifact_path(self, name: str) -> Path:
        if name not in self.artifacts:
            raise MaskeditError(f"run {self.id} has no artifact {name!r}")
        return self.path / self.artifacts[name]["file"]

    def artifact_sha256(self, name: str) -> str:
        if name not in self.artifacts:
            raise MaskeditError(f"run {self.id} has no artifact {name!r}")
        return self.artifacts[name]["sha256"]


class RunWriter:
    """Write-side handle for one run; owns the manifest."""

    def __init__(self, path: Path, run_id: str, parent_id: str | None = None):
        self.path = path
        self.path.mkdir(parents=True, exist_ok=False)
        self.manifest: dict[str, Any] = {
            "id": run_id,
            "parent_id": parent_id,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "status": "created",
            "instruction": None,
            "prompts": None,
            "description": None,
            "settings": {},
            "timings": {},
            "artifacts": {},
            "metrics": {},
            "mask": None,
            "warnings": [],
            "error": None,
        }
        self._flush()

    @property
    def run_id(self) -> str:
        return self.manifest["id"]

    def _flush(self) -> None:
        data = json.dumps(self.manifest, indent=2, sort_keys=True).encode("utf-8")
        _atomic_write_bytes(self.path / "manifest.json", data)

    def set_status(self, status: str) -> None:
        current = self.manifest["status"]
        if STATUS_ORDER.index(status) <= STATUS_ORDER.index(current):
            raise MaskeditError(f"status may only move forward: {current} -> {status}")
        if current in TERMINAL_STATUSES:
            raise MaskeditError(f"run {self.run_id} is terminal ({current})")
        self.manifest["status"] = status
        self._flush()

    def record(self, **fields_: Any) -> None:
        self.manifest.update(fields_)
        self._flush()

    def add_warning(self, message: str) -> None:
        self.manifest["warnings"].append(message)
        self._flush()

    def record_timing(self, stage: str, seconds: float) -> None:
        self.manifest["timings"][stage] = round(seconds, 6)
        self._flush()

    def add_artifact_bytes(self, name: str, filename: str, data: bytes) -> Path:
        target = self.path / filename
        target.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write_bytes(target, data)
        self.manifest["artifacts"][name] = {"file": filename, "sha256": _sha256(data)}
        self._flush()
        return target

    def add_array_artifact(self, name: str, filename: str, array: np.ndarray) -> Path:
        import io

        buffer = io.BytesIO()
        np.save(buffer, array)
        return self.add_artifact_bytes(name, filename, buffer.getvalue())

    def add_json_artifact(self, name: str, filename: str, payload: Any) -> Path:
        data = json.dumps(payload, indent=2, sort_keys=True).encode("utf-8")
        return self.add_artifact_bytes(name, filename, data)

    def copy_artifact_from(self, source: EditRun, name: str, new_name: str | None = None) -> Path:
        entry = source.artifacts[name]
        target_name = new_name or name
        target = self.path / entry["file"]
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source.path / entry["file"], target)
        self.manifest["artifacts"][target_name] = dict(entry)
        self._flush()
        return target

    def finish_done(self) -> None:
        self.set_status("done")

    def finish_failed(self, stage: str, message: str) -> None:
        self.manifest["error"] = {"stage": stage, "message": message}
        self.set_status("failed")


class RunStore:
    """Create/read/list runs under a root directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def new_run_id(self) -> str:
        return time.strftime("%Y%m%d-%H%M%S") + "-" + secrets.token_hex(3)

    def create_run(self, parent_id: str | None = None) -> RunWriter:
        while True:
            run_id = self.new_run_id()
            try:
                return RunWriter(self.root / run_id, run_id, parent_id)
            except FileExistsError:
                continue

    def read(self, run_id: str) -> EditRun:
        manifest_path = self.root / run_id / "manifest.json"
        if not manifest_path.exists():
            raise UnknownRunError(f"unknown run id: {run_id}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        return EditRun.from_manifest(self.root / run_id, manifest)

    def list_runs(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / "manifest.json").exists())
