"""Application configuration: backend selection, schedule, run defaults.

Configuration comes from an optional YAML/JSON file (``--config`` or the
``MASKEDIT_CONFIG`` environment variable), on top of a named backend
profile.  Secrets are never stored in the file; remote adapters read their
keys from environment variables named in the config.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from maskedit.errors import MaskeditError
from maskedit.scheduler import NoiseSchedule, geometric_schedule

CONFIG_ENV_VAR = "MASKEDIT_CONFIG"


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "geometric"
    total_steps: int = 20
    decay: float = 0.92

    def build(self) -> NoiseSchedule:
        if self.kind != "geometric":
            raise MaskeditError(f"unknown schedule kind {self.kind!r}; real backends supply their own")
        return geometric_schedule(self.total_steps, self.decay)


@dataclass(frozen=True)
class BackendSelection:
    estimator: str = "caption-hash"
    codec: str = "identity"
    detector: str = "mock-palette"
    segmenter: str = "mock-boxfill"
    chat: str = "rule-based"
    describer: str = "static"

    def as_dict(self) -> dict[str, str]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8787
    workers: int = 2
    max_pending: int = 8
    max_upload_bytes: int = 8 * 1024 * 1024
    ui_dir: str = "frontend/dist"


@dataclass(frozen=True)
class RemoteConfig:
    chat_endpoint: str = ""
    chat_model: str = ""
    chat_api_key_env: str = "MASKEDIT_CHAT_API_KEY"
    describer_endpoint: str = ""
    describer_api_key_env: str = "MASKEDIT_DESCRIBER_API_KEY"


@dataclass(frozen=True)
class RunDefaults:
    encoding_ratio: float = 0.8
    theta: float = 0.3
    mask_source: str = "segmenter"
    seed: int = 0
    score_threshold: float = 0.35
    max_instances: int | None = None
    n_noise_samples: int = 10
    noising_ratio: float = 0.5
    smoothing_radius: int = 1
    ddim_steps: int = 50
    pixel_paste_back: bool = False
    use_describer: bool = False
    debug_artifacts: bool = False
    metric_eps: float = 0.01


@dataclass(frozen=True)
class AppConfig:
    runs_root: Path = Path("runs")
    profile: str = "mock"
    backends: BackendSelection = field(default_factory=BackendSelection)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    defaults: RunDefaults = field(default_factory=RunDefaults)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    remote: RemoteConfig = field(default_factory=RemoteConfig)


# Profiles bundle all backend choices under one name.  "mock" is fully
# offline; "local" and "remote" name adapter slots that require a model
# runtime / remote endpoints to be configured.
PROFILES: dict[str, BackendSelection] = {
    "mock": BackendSelection(),
    "local": BackendSelection(
        estimator="latent-diffusion",
        codec="vae",
        detector="grounding-dino",
        segmenter="sam",
        chat="rule-based",
        describer="static",
    ),
    "remote": BackendSelection(
        estimator="latent-diffusion",
        codec="vae",
        detector="grounding-dino",
        segmenter="sam",
        chat="remote-chat",
        describer="remote-describer",
    ),
}


def _build_section(cls, payload: dict[str, Any] | None):
    if not payload:
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise MaskeditError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**payload)


def apply_profile(config: AppConfig, profile: str) -> AppConfig:
    if profile not in PROFILES:
        raise MaskeditError(f"unknown backend profile {profile!r}; known: {sorted(PROFILES)}")
    return replace(config, profile=profile, backends=PROFILES[profile])


def load_config(path: str | Path | None = None, profile: str | None = None) -> AppConfig:
    """Load config from a YAML/JSON file, the env var, or built-in defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    payload: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise MaskeditError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        payload = json.loads(text) if path.suffix == ".json" else (yaml.safe_load(text) or {})

    config = AppConfig(
        runs_root=Path(payload.get("runs_root", "runs")),
        profile=payload.get("profile", "mock"),
        backends=_build_section(BackendSelection, payload.get("backends")),
        schedule=_build_section(ScheduleConfig, payload.get("schedule")),
        defaults=_build_section(RunDefaults, payload.get("defaults")),
        service=_build_section(ServiceConfig, payload.get("service")),
        remote=_build_section(RemoteConfig, payload.get("remote")),
    )
    if "backends" not in payload:
        config = apply_profile(config, config.profile)
    if profile is not None:
        config = apply_profile(config, profile)
    return config
