from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from wrapfit.errors import DomainError
from wrapfit.kde import (
    BandwidthMatrix,
    chi2_density,
    chi2_logpdf,
    chi2_quantile,
    chi2_unwrapped_density,
    distance_kde,
    linear_kde,
    log_distance_kde,
    log_smoothed_on_log_scale,
    normal_reference_bandwidth,
    smoothed_wn_model,
    torus_kde,
    unwrapped_distance_sample,
    unwrapped_distance_support,
)
from wrapfit.torus import TWO_PI, LatticeBox, WrappedModelParams, wrap, wrapped_density


def test_bandwidth_validation() -> None:
    with pytest.raises(DomainError):
        BandwidthMatrix(0.0)
    assert BandwidthMatrix(0.5, 2).matrix == pytest.approx(0.25 * np.eye(2))


def test_torus_kde_single_datum_matches_density() -> None:
    value = torus_kde([2.0], [2.0], math.pi / 8, LatticeBox(3, 1))
    assert value == pytest.approx(1.015896, rel=1e-5)


def test_torus_kde_equals_mean_of_wrapped_kernels(rng: np.random.Generator) -> None:
    data = wrap(rng.normal(1.0, 0.6, size=(30, 2)))
    y = np.array([0.8, 1.4])
    box = LatticeBox(2, 2)
    expected = np.mean(
        [wrapped_density(y, WrappedModelParams.isotropic(d, 0.3), box=box) for d in data]
    )
    assert torus_kde(y, data, 0.3, box) == pytest.approx(expected)


def test_torus_kde_is_periodic(rng: np.random.Generator) -> None:
    data = wrap(rng.normal(0.0, 0.5, size=(40, 2)))
    box = LatticeBox(2, 2)
    y = np.array([0.3, 6.0])
    shifted = y + TWO_PI * np.array([2, -1])
    assert torus_kde(shifted, data, 0.2, box) == pytest.approx(torus_kde(y, data, 0.2, box))


def test_torus_kde_uniform_limit(rng: np.random.Generator) -> None:
    data = wrap(rng.normal(size=(10, 2)))
    value = torus_kde([1.0, 2.0], data, 10.0, LatticeBox(8, 2))
    assert value == pytest.approx(1 / TWO_PI**2, rel=1e-3)


def test_linear_kde_examples() -> None:
    assert linear_kde([0.0], [0.0], 1.0) == pytest.approx(1 / math.sqrt(TWO_PI))
    a = 0.7
    sample = np.array([-a, a])
    assert linear_kde([0.0], sample, 0.5) == pytest.approx(linear_kde([0.0], -sample, 0.5))
    total, _ = quad(lambda x: linear_kde([x], sample, 0.5), -10, 10)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_smoothed_model_limits() -> None:
    params = WrappedModelParams.isotropic([1.0], 0.5)
    box = LatticeBox(3, 1)
    tiny = smoothed_wn_model([1.3], params, 1e-6, box)
    assert tiny == pytest.approx(wrapped_density([1.3], params, box=box), rel=1e-8)
    total, _ = quad(lambda y: smoothed_wn_model([y], params, 0.3, box), 0.0, TWO_PI)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_smoothed_model_is_a_convolution() -> None:
    sigma, h, y = 0.5, 0.3, 1.0
    box = LatticeBox(3, 1)
    model = WrappedModelParams.isotropic([0.0], sigma)
    kernel = WrappedModelParams.isotropic([0.0], h)

    def integrand(t: float) -> float:
        left = wrapped_density([y - t], model, box=box)
        return float(left * wrapped_density([t], kernel, box=box))

    convolved, _ = quad(integrand, 0.0, TWO_PI, epsabs=1e-12, epsrel=1e-12, limit=200)
    assert convolved == pytest.approx(smoothed_wn_model([y], model, h, box), abs=1e-6)


def test_chi2_oracles() -> None:
    assert chi2_quantile(0.99, 2) == pytest.approx(9.2103, abs=1e-4)
    assert chi2_quantile(0.99, 7) == pytest.approx(18.4753, abs=1e-4)
    assert chi2_density(0.0, 2) == pytest.approx(0.5)
    assert chi2_logpdf(np.array([1.0]), 3)[0] == pytest.approx(math.log(chi2_density(1.0, 3)))
    with pytest.raises(DomainError):
        chi2_quantile(1.0, 2)


def test_distance_kde_tail_and_mass(rng: np.random.Generator) -> None:
    sample = rng.chisquare(3, size=2000)
    assert distance_kde(1e6, sample) == pytest.approx(0.0, abs=1e-12)
    assert distance_kde(0.0, sample) == 0.0

    def integrand(z: float) -> float:
        return float(math.exp(log_distance_kde(math.exp(z), sample) + z))

    total, _ = quad(integrand, -30.0, 10.0, limit=400)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_distance_kde_tracks_chi2_at_mode() -> None:
    sample = np.random.default_rng(3).chisquare(4, size=20_000)
    assert distance_kde(2.0, sample) == pytest.approx(chi2_density(2.0, 4), rel=0.1)


def test_distance_kde_rejects_bad_sample() -> None:
    with pytest.raises(DomainError):
        distance_kde(1.0, np.array([]))
    with pytest.raises(DomainError):
        distance_kde(1.0, np.array([-1.0, 2.0]))


def test_normal_reference_bandwidth_shrinks_with_n() -> None:
    gen = np.random.default_rng(5)
    small = normal_reference_bandwidth(gen.chisquare(2, size=100))
    large = normal_reference_bandwidth(gen.chisquare(2, size=10_000))
    assert 0 < large < small
    assert normal_reference_bandwidth([1.0]) == 1.0


def test_smoothed_reference_reduces_to_reference_for_small_bandwidth() -> None:
    value = log_smoothed_on_log_scale([2.0], lambda t: chi2_logpdf(t, 3), 1e-3)[0]
    assert math.exp(value) == pytest.approx(chi2_density(2.0, 3), rel=1e-3)


def test_smoothed_reference_has_unit_mass() -> None:
    def integrand(z: float) -> float:
        log_value = log_smoothed_on_log_scale([math.exp(z)], lambda t: chi2_logpdf(t, 2), 0.3)
        return float(math.exp(log_value[0] + z))

    total, _ = quad(integrand, -30.0, 8.0, limit=400)
    assert total == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize(("scale", "bound"), [(math.pi / 2, 24.0), (3 * math.pi / 8, 128 / 3)])
def test_unwrapped_support_bound(scale: float, bound: float) -> None:
    params = WrappedModelParams.isotropic(np.zeros(6), scale)
    assert unwrapped_distance_support(params) == pytest.approx(bound)


def test_unwrapped_distance_sample_respects_support() -> None:
    wide = WrappedModelParams.isotropic(np.zeros(6), math.pi / 2)
    sample = unwrapped_distance_sample(wide, 100_000, seed=1)
    assert 12.0 < sample.max() < 24.0
    narrower = WrappedModelParams.isotropic(np.zeros(6), 3 * math.pi / 8)
    assert 21.0 < unwrapped_distance_sample(narrower, 100_000, seed=1).max() < 128 / 3


def test_unwrapped_distance_sample_is_cached_and_validated() -> None:
    params = WrappedModelParams.isotropic(np.zeros(2), 0.4)
    first = unwrapped_distance_sample(params, 2000, seed=4)
    assert unwrapped_distance_sample(params, 2000, seed=4) is first
    with pytest.raises(DomainError, match="mc_size"):
        unwrapped_distance_sample(params, 10)


def test_chi2_unwrapped_density_close_to_chi2_for_small_scale() -> None:
    params = WrappedModelParams.isotropic(np.zeros(2), 0.3)
    value = chi2_unwrapped_density(1.5, params, 50_000, seed=2)
    assert value == pytest.approx(chi2_density(1.5, 2), rel=0.1)


def test_chi2_unwrapped_density_vanishes_past_the_support_bound() -> None:
    params = WrappedModelParams.isotropic(np.zeros(2), math.pi / 2)
    bound = unwrapped_distance_support(params)
    assert bound == pytest.approx(8.0)
    assert chi2_unwrapped_density(bound + 0.5, params, 20_000, seed=3) == 0.0
    values = chi2_unwrapped_density([1.0, bound, 2.0 * bound], params, 20_000, seed=3)
    assert values.shape == (3,)
    assert values[0] > 0.0
    assert values[1:].tolist() == [0.0, 0.0]
