from __future__ import annotations

import math

import numpy as np
import pytest

from wrapfit.errors import DomainError
from wrapfit.estimators import EstimatorKind
from wrapfit.influence import (
    INFLUENCE_KINDS,
    InfluenceFunction,
    WrappedMixture,
    influence_location,
    sigma_unwrapped,
    sigma_unwrapped_curve,
)
from wrapfit.raf import RafKind


def test_sigma_unwrapped_small_scale_is_identity() -> None:
    assert sigma_unwrapped(0.2) == pytest.approx(0.2, rel=1e-6)


def test_sigma_unwrapped_reference_value() -> None:
    assert sigma_unwrapped(math.pi / 2) == pytest.approx(1.460, abs=1e-3)


def test_sigma_unwrapped_uniform_limit() -> None:
    assert sigma_unwrapped(20.0) == pytest.approx(math.pi / math.sqrt(3), rel=1e-4)
    with pytest.raises(DomainError):
        sigma_unwrapped(0.0)


def test_sigma_unwrapped_curve_is_increasing_and_below_identity() -> None:
    curve = sigma_unwrapped_curve(np.linspace(0.1, 3.0, 30))
    values = [su for _, su in curve]
    assert all(b > a for a, b in zip(values, values[1:], strict=False))
    assert all(su <= s0 + 1e-9 for s0, su in curve)


def test_mixture_validation() -> None:
    with pytest.raises(DomainError, match="eps"):
        WrappedMixture(eps=0.5)
    with pytest.raises(DomainError, match="scales"):
        WrappedMixture(sigma0=0.0)
    assert len(WrappedMixture().components()) == 1
    assert len(WrappedMixture(eps=0.1).components()) == 2


def test_unsupported_functional() -> None:
    with pytest.raises(DomainError, match="Unsupported functional"):
        InfluenceFunction(EstimatorKind.EM)
    with pytest.raises(DomainError, match="bandwidth"):
        InfluenceFunction(EstimatorKind.WEM, h=0.0)


@pytest.mark.parametrize("kind", INFLUENCE_KINDS, ids=str)
def test_clean_model_is_fisher_consistent(kind: EstimatorKind) -> None:
    function = InfluenceFunction(kind)
    assert function.location == pytest.approx(0.0, abs=1e-6)
    assert function(0.0) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("kind", INFLUENCE_KINDS, ids=str)
def test_clean_influence_matches_maximum_likelihood(kind: EstimatorKind) -> None:
    function = InfluenceFunction(kind)
    z = np.array([0.1, 0.3, 1.0, 2.5])
    values = function(z)
    assert function(-z) == pytest.approx(-values, abs=1e-6)
    assert values == pytest.approx(function.mle_reference(z), rel=1e-3)


@pytest.mark.parametrize("kind", INFLUENCE_KINDS, ids=str)
def test_contaminant_region_is_downweighted(kind: EstimatorKind) -> None:
    function = InfluenceFunction(kind, WrappedMixture(eps=0.1))
    z = math.pi / 2
    assert abs(function(z)) < 0.5 * abs(function.mle_reference(z))
    assert function(0.2) > 0


def test_unwrapped_influence_vanishes_outside_the_cell() -> None:
    function = InfluenceFunction(EstimatorKind.WCEM_UNWRAP)
    values = function(np.array([-4.0, 3.5, 5.0]))
    assert np.array_equal(values, np.zeros(3))
    assert function.mle_reference(4.0) == 0.0
    assert function.mle_reference(1.0) == 1.0


def test_robust_location_resists_contamination() -> None:
    mixture = WrappedMixture(eps=0.1)
    for kind in INFLUENCE_KINDS:
        function = InfluenceFunction(kind, mixture)
        assert influence_location(0.3, kind, mixture) == pytest.approx(function(0.3))
        assert abs(function.location) < 0.08


def test_raf_changes_the_functional() -> None:
    mixture = WrappedMixture(eps=0.1)
    gkl = InfluenceFunction(EstimatorKind.WEM, mixture, raf=RafKind.gkl(0.25))
    pwd = InfluenceFunction(EstimatorKind.WEM, mixture, raf=RafKind.pwd(-0.5))
    assert gkl(1.2) != pytest.approx(pwd(1.2))


def test_sigma_unwrapped_three_eighths_pi() -> None:
    assert sigma_unwrapped(3 * math.pi / 8) == pytest.approx(1.163, abs=5e-3)


def _periodic_grid(points: int = 2048) -> np.ndarray:
    return -math.pi + 2 * math.pi * np.arange(points) / points


@pytest.mark.parametrize("sigma0", [math.pi / 8, math.pi / 4])
@pytest.mark.parametrize("eps", [0.1, 0.2])
def test_torus_influence_has_zero_mean_under_the_mixture(sigma0: float, eps: float) -> None:
    mixture = WrappedMixture(eps=eps, sigma0=sigma0)
    function = InfluenceFunction(EstimatorKind.WEM, mixture)
    x = _periodic_grid()
    density = np.exp(mixture.log_density(x))
    mean = float(np.sum(function(x) * density)) * 2 * math.pi / x.size
    assert mean == pytest.approx(0.0, abs=1e-5)


@pytest.mark.parametrize("eps", [0.1, 0.2])
def test_torus_influence_changes_sign_next_to_the_antimode(eps: float) -> None:
    function = InfluenceFunction(EstimatorKind.WEM, WrappedMixture(eps=eps, sigma0=math.pi / 4))
    antimode = function.location + math.pi
    before, after = function(np.array([antimode - 0.03, antimode + 0.03]))
    assert before * after < 0


_GRID_OFFSETS = np.linspace(-2 * math.pi, 2 * math.pi, 721)


@pytest.mark.slow
@pytest.mark.parametrize("sigma0", [math.pi / 8, math.pi / 4], ids=["pi/8", "pi/4"])
@pytest.mark.parametrize("eps", [0.0, 0.05, 0.1, 0.2])
def test_influence_shapes_on_a_fine_grid(eps: float, sigma0: float) -> None:
    mixture = WrappedMixture(eps=eps, sigma0=sigma0)

    torus = InfluenceFunction(EstimatorKind.WEM, mixture)
    values = torus(torus.location + _GRID_OFFSETS)
    assert values[:361] == pytest.approx(values[360:], abs=1e-7)
    near_antimode = values[np.abs(np.abs(_GRID_OFFSETS) - math.pi) <= 0.04]
    assert near_antimode.min() < 0.0 < near_antimode.max()

    outside = np.abs(_GRID_OFFSETS) > math.pi
    for kind in (EstimatorKind.WCEM_UNWRAP, EstimatorKind.WCEM_DIST):
        function = InfluenceFunction(kind, mixture)
        values = function(function.location + _GRID_OFFSETS)
        assert np.all(values[outside] == 0.0), kind
        assert np.any(values[~outside] != 0.0), kind
        if kind is EstimatorKind.WCEM_DIST:
            keep = np.abs(np.abs(_GRID_OFFSETS) - math.pi) > 1e-9
            magnitude = np.abs(values)
            assert magnitude[keep] == pytest.approx(magnitude[::-1][keep], rel=1e-6, abs=1e-12)
