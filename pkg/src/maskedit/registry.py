"""Backend registry: named factories per backend kind, loaded lazily.

Factories take the application config and return a backend instance; they
run only when a pipeline actually needs the backend, so the offline test
suite never touches model weights.  Real-model slots are registered as
placeholders that raise a clear error until a runtime is plugged in.
"""

from __future__ import annotations

from typing import Any, Callable

from maskedit.config import AppConfig
from maskedit.errors import BackendUnavailableError, MaskeditError

Factory = Callable[[AppConfig], Any]

KINDS = ("estimator", "codec", "detector", "segmenter", "chat", "describer")


class BackendRegistry:
    def __init__(self):
        self._factories: dict[str, dict[str, Factory]] = {kind: {} for kind in KINDS}

    def register(self, kind: str, name: str, factory: Factory, overwrite: bool = False) -> None:
        if kind not in self._factories:
            raise MaskeditError(f"unknown backend kind {kind!r}; known: {KINDS}")
        if name in self._factories[kind] and not overwrite:
            raise MaskeditError(f"{kind} backend {name!r} already registered")
        self._factories[kind][name] = factory

    def create(self, kind: str, name: str, config: AppConfig) -> Any:
        try:
            factory = self._factories[kind][name]
        except KeyError:
            raise MaskeditError(
                f"no {kind} backend named {name!r}; registered: {sorted(self._factories.get(kind, {}))}"
            ) from None
        return factory(config)

    def names(self, kind: str) -> list[str]:
        return sorted(self._factories[kind])


def _unavailable(kind: str, name: str, hint: str) -> Factory:
    def factory(config: AppConfig):
        raise BackendUnavailableError(f"{kind} backend {name!r} is not available here: {hint}")

    return factory


def default_registry() -> BackendRegistry:
    from maskedit.estimators import DownsampleCodec, HashedCaptionEstimator, IdentityCodec, ToyLinearEstimator
    from maskedit.language import RemoteChatClient, RuleChatClient, StaticDescriber
    from maskedit.synthetic import BoxFillSegmenter, PaletteDetector

    registry = BackendRegistry()

    registry.register("estimator", "caption-hash", lambda cfg: HashedCaptionEstimator())
    registry.register("estimator", "toy-linear", lambda cfg: ToyLinearEstimator())
    registry.register("codec", "identity", lambda cfg: IdentityCodec())
    registry.register("codec", "downsample", lambda cfg: DownsampleCodec())
    registry.register("detector", "mock-palette", lambda cfg: PaletteDetector())
    registry.register("segmenter", "mock-boxfill", lambda cfg: BoxFillSegmenter())
    registry.register("chat", "rule-based", lambda cfg: RuleChatClient())
    registry.register("describer", "static", lambda cfg: StaticDescriber())

    def remote_chat(cfg: AppConfig):
        if not cfg.remote.chat_endpoint or not cfg.remote.chat_model:
            raise BackendUnavailableError("remote chat needs remote.chat_endpoint and remote.chat_model in the config")
        return RemoteChatClient(
            endpoint=cfg.remote.chat_endpoint,
            model=cfg.remote.chat_model,
            api_key_env=cfg.remote.chat_api_key_env,
        )

    registry.register("chat", "remote-chat", remote_chat)

    # Real-model adapter slots; plug implementations in via register().
    runtime_hint = "requires a latent-diffusion runtime with downloaded weights"
    registry.register("estimator", "latent-diffusion", _unavailable("estimator", "latent-diffusion", runtime_hint))
    registry.register("codec", "vae", _unavailable("codec", "vae", runtime_hint))
    registry.register("detector", "grounding-dino", _unavailable("detector", "grounding-dino", "requires detector weights"))
    registry.register("segmenter", "sam", _unavailable("segmenter", "sam", "requires segmentation weights"))
    registry.register(
        "describer", "remote-describer", _unavailable("describer", "remote-describer", "configure a vision endpoint")
    )
    return registry
