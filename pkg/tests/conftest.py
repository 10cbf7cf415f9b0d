from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from wrapfit.estimators import FitConfig
from wrapfit.simulation import ContaminatedSample, ScenarioConfig, generate_contaminated, trial_rng
from wrapfit.torus import FloatArray, WrappedModelParams, sample_wrapped

BENCHMARKS = Path(__file__).resolve().parents[1] / "benchmarks"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def true_params() -> WrappedModelParams:
    sigma = (math.pi / 8) ** 2 * np.array([[1.0, 0.5], [0.5, 1.0]])
    return WrappedModelParams(np.array([1.0, 5.5]), sigma)


@pytest.fixture
def clean_sample(true_params: WrappedModelParams) -> FloatArray:
    return sample_wrapped(true_params, 250, np.random.default_rng(7))


@pytest.fixture
def contaminated_scenario() -> ScenarioConfig:
    return ScenarioConfig(n=200, p=2, eps=0.2, n_trials=4, seed=11)


@pytest.fixture
def contaminated_sample(contaminated_scenario: ScenarioConfig) -> ContaminatedSample:
    return generate_contaminated(contaminated_scenario, trial_rng(contaminated_scenario.seed, 0))


@pytest.fixture
def fast_config() -> FitConfig:
    return FitConfig(n_subsamples=5, max_iter=200, mc_size=5_000)


@pytest.fixture
def fixture_8tim() -> Path:
    return BENCHMARKS / "synthetic_8tim.csv"


@pytest.fixture
def fixture_rna() -> Path:
    return BENCHMARKS / "synthetic_rna.csv"
