"""Deterministic DDIM math: denoising steps, inversion steps, partial encoding.

All operations are pure functions of their arguments.  The step convention
is "a step from timestep t produces t-1 (denoise) or t+1 (invert)", and the
noise estimator is always evaluated at the current state and current
timestep:

    denoise:  x_{t-1} = sqrt(abar_{t-1}) * f(x_t, c, t) + sqrt(1 - abar_{t-1}) * eps(x_t, c, t)
    invert:   x_{t+1} = sqrt(abar_{t+1}) * f(x_t, c, t) + sqrt(1 - abar_{t+1}) * eps(x_t, c, t)

with the clean-image estimate

    f(x_t, c, t) = (x_t - sqrt(1 - abar_t) * eps(x_t, c, t)) / sqrt(abar_t).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from maskedit.errors import EstimatorError, ScheduleError, ShapeMismatchError

if TYPE_CHECKING:
    from maskedit.estimators import NoiseEstimator

# Floor applied to abar_t before dividing in the clean-image estimate.
ALPHA_FLOOR = 1e-8


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention sequence abar_t for t = 0..T.

    ``alphas[0]`` must be exactly 1.0 and the sequence must be strictly
    decreasing within (0, 1].  ``validate=False`` skips the checks; it exists
    solely so tests can probe degenerate schedules.
    """

    alphas: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        object.__setattr__(self, "alphas", alphas)
        if not self.validate:
            return
        if alphas.ndim != 1 or len(alphas) < 2:
            raise ScheduleError("schedule needs at least alphas[0..1]")
        if alphas[0] != 1.0:
            raise ScheduleError(f"alphas[0] must be 1.0, got {alphas[0]}")
        if not np.all((alphas > 0.0) & (alphas <= 1.0)):
            raise ScheduleError("alphas must lie in (0, 1]")
        if not np.all(np.diff(alphas) < 0.0):
            raise ScheduleError("alphas must be strictly decreasing")

    @property
    def total_steps(self) -> int:
        return len(self.alphas) - 1

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.total_steps:
            raise ScheduleError(f"timestep {t} outside schedule range 0..{self.total_steps}")
        return float(self.alphas[t])

    def timestep_for_ratio(self, ratio: float) -> int:
        """Map an encoding ratio in (0, 1] to a timestep: round(r*T), minimum 1."""
        if not 0.0 < ratio <= 1.0:
            raise ScheduleError(f"encoding ratio must lie in (0, 1], got {ratio}")
        return max(1, round(ratio * self.total_steps))

    def strided(self, num_steps: int) -> tuple["NoiseSchedule", list[int]]:
        """Subset to ``num_steps`` evenly strided steps.

        Returns the reduced schedule plus the original timestep owned by each
        reduced index (real backends need the original index to condition on).
        """
        if not 1 <= num_steps <= self.total_steps:
            raise ScheduleError(f"cannot stride {self.total_steps} steps down to {num_steps}")
        idx = np.round(np.linspace(0, self.total_steps, num_steps + 1)).astype(int)
        return NoiseSchedule(self.alphas[idx]), [int(i) for i in idx]

    def content_hash(self) -> str:
        return hashlib.sha256(self.alphas.tobytes()).hexdigest()


def geometric_schedule(total_steps: int, decay: float = 0.999) -> NoiseSchedule:
    """Toy schedule abar_t = decay**t, used by the offline test backends."""
    if not 0.0 < decay < 1.0:
        raise ScheduleError(f"decay must lie in (0, 1), got {decay}")
    t = np.arange(total_steps + 1, dtype=np.float64)
    return NoiseSchedule(decay**t)


@dataclass(frozen=True)
class LatentState:
    """A latent array of shape [C, H, W] tagged with its timestep."""

    data: np.ndarray
    t: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 3:
            raise ShapeMismatchError(f"latent must be [C, H, W], got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ScheduleError("latent contains non-finite entries")
        if self.t < 0:
            raise ScheduleError(f"timestep must be non-negative, got {self.t}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass
class Trajectory:
    """Inversion states for contiguous timesteps 0..r_idx, plus the caption used."""

    states: list[LatentState]
    caption: str
    encoding_ratio: float | None = None

    def __post_init__(self):
        for t, state in enumerate(self.states):
            if state.t != t:
                raise ScheduleError(f"trajectory timesteps must be contiguous from 0; index {t} holds t={state.t}")
        shapes = {s.shape for s in self.states}
        if len(shapes) > 1:
            raise ShapeMismatchError(f"trajectory states disagree on shape: {shapes}")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def max_timestep(self) -> int:
        return len(self.states) - 1

    def state(self, t: int) -> LatentState:
        if not 0 <= t <= self.max_timestep:
            raise ScheduleError(f"trajectory has no state at t={t}")
        return self.states[t]

    @property
    def final(self) -> LatentState:
        return self.states[-1]

    def save(self, directory: str | Path, schedule: NoiseSchedule) -> Path:
        """Persist one array file per timestep plus a manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for state in self.states:
            np.save(directory / f"state_{state.t:04d}.npy", state.data)
        manifest = {
            "timesteps": list(range(len(self.states))),
            "caption": self.caption,
            "encoding_ratio": self.encoding_ratio,
            "schedule_hash": schedule.content_hash(),
        }
        path = directory / "trajectory.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, directory: str | Path) -> "Trajectory":
        directory = Path(directory)
        manifest = json.loads((directory / "trajectory.json").read_text(encoding="utf-8"))
        states = [
            LatentState(np.load(directory / f"state_{t:04d}.npy"), t) for t in manifest["timesteps"]
        ]
        return cls(states=states, caption=manifest["caption"], encoding_ratio=manifest.get("encoding_ratio"))


def _call_estimator(
    estimator: "NoiseEstimator", x: np.ndarray, caption: str, t: int
) -> np.ndarray:
    try:
        eps = estimator.predict(x, caption, t)
    except Exception as exc:
        raise EstimatorError(f"estimator {getattr(estimator, 'name', '?')!r} failed at t={t}: {exc}") from exc
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x.shape:
        raise EstimatorError(
            f"estimator {getattr(estimator, 'name', '?')!r} returned shape {eps.shape}, expected {x.shape}"
        )
    if not np.isfinite(eps).all():
        raise EstimatorError(f"estimator {getattr(estimator, 'name', '?')!r} returned non-finite values at t={t}")
    return eps


def predicted_x0(x_t: LatentState, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Clean-image estimate f(x_t) = (x_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x_t.data.shape:
        raise ShapeMismatchError(f"eps shape {eps.shape} != latent shape {x_t.data.shape}")
    alpha = max(schedule.alpha(x_t.t), ALPHA_FLOOR)
    return (x_t.data - np.sqrt(1.0 - alpha) * eps) / np.sqrt(alpha)


def _step(
    x_t: LatentState,
    estimator: "NoiseEstimator",
    caption: str,
    schedule: NoiseSchedule,
    target_t: int,
) -> LatentState:
    eps = _call_estimator(estimator, x_t.data, caption, x_t.t)
    x0_hat = predicted_x0(x_t, eps, schedule)
    alpha_target = schedule.alpha(target_t)
    out = np.sqrt(alpha_target) * x0_hat + np.sqrt(1.0 - alpha_target) * eps
    if not np.isfinite(out).all():
        raise EstimatorError(f"step {x_t.t} -> {target_t} produced non-finite output")
    return LatentState(out, target_t)


def ddim_denoise_step(
    x_t: LatentState, estimator: "NoiseEstimator", caption: str, schedule: NoiseSchedule
) -> LatentState:
    """One deterministic denoising step, t -> t-1."""
    if x_t.t < 1:
        raise ScheduleError(f"cannot denoise below t=0 (state at t={x_t.t})")
    schedule.alpha(x_t.t)
    return _step(x_t, estimator, caption, schedule, x_t.t - 1)


def ddim_invert_step(
    x_t: LatentState, estimator: "NoiseEstimator", caption: str, schedule: NoiseSchedule
) -> LatentState:
    """One inversion step, t -> t+1."""
    if x_t.t > schedule.total_steps - 1:
        raise ScheduleError(f"cannot invert above t=T={schedule.total_steps} (state at t={x_t.t})")
    return _step(x_t, estimator, caption, schedule, x_t.t + 1)


def invert_to_ratio(
    x_0: LatentState,
    estimator: "NoiseEstimator",
    caption: str,
    ratio: float,
    schedule: NoiseSchedule,
) -> Trajectory:
    """Invert x_0 up to round(ratio * T), recording every intermediate state."""
    if x_0.t != 0:
        raise ScheduleError(f"inversion starts from t=0, got state at t={x_0.t}")
    r_idx = schedule.timestep_for_ratio(ratio)
    states = [x_0]
    for _ in range(r_idx):
        states.append(ddim_invert_step(states[-1], estimator, caption, schedule))
    return Trajectory(states=states, caption=caption, encoding_ratio=ratio)


def generate(
    x_r: LatentState, estimator: "NoiseEstimator", caption: str, schedule: NoiseSchedule
) -> LatentState:
    """Plain DDIM generation: denoise from the given state all the way to t=0."""
    state = x_r
    while state.t > 0:
        state = ddim_denoise_step(state, estimator, caption, schedule)
    return state
