"""Exception types shared across the pipeline."""

from __future__ import annotations


class MaskeditError(Exception):
    """Base class for all package errors."""


class ScheduleError(MaskeditError):
    """Invalid noise schedule or timestep outside the schedule range."""


class ShapeMismatchError(MaskeditError):
    """Array shapes disagree where they must match."""


class EstimatorError(MaskeditError):
    """A noise-estimator backend failed or returned invalid output."""


class CodecError(MaskeditError):
    """Latent codec input violates its contract or a backend failed."""


class ObjectNotFoundError(MaskeditError):
    """No detection above threshold for a segmentation prompt."""

    def __init__(self, query: str):
        super().__init__(f"object not found: {query}")
        self.query = query


class PromptParseError(MaskeditError):
    """A chat response is missing one of the labelled prompt fields."""

    def __init__(self, missing_label: str):
        super().__init__(f"missing field {missing_label!r} in chat response")
        self.missing_label = missing_label


class NeedsChatBackendError(MaskeditError):
    """The offline rule parser does not cover this instruction."""

    def __init__(self, instruction: str):
        super().__init__(f"needs chat backend: unsupported instruction pattern: {instruction!r}")
        self.instruction = instruction


class BackendUnavailableError(MaskeditError):
    """A configured backend cannot be constructed in this environment."""


class StageError(MaskeditError):
    """A pipeline stage failed; carries the stage name for run records."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class UnknownRunError(MaskeditError):
    """Run id does not exist in the run store."""
