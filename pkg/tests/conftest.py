from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from maskedit.estimators import ToyLinearEstimator
from maskedit.scheduler import LatentState, geometric_schedule


@pytest.fixture
def schedule8():
    return geometric_schedule(8, 0.9)


@pytest.fixture
def bias_estimator():
    return ToyLinearEstimator(gain=0.0, caption_bias={"cat": 0.3, "dog": -0.1})


@pytest.fixture
def linear_estimator():
    return ToyLinearEstimator(gain=0.4, caption_bias={"cat": 0.3, "dog": -0.1})


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_latent(rng: np.random.Generator, shape=(2, 4, 4), t: int = 0) -> LatentState:
    return LatentState(rng.standard_normal(shape), t)
