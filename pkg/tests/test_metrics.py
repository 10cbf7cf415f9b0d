from __future__ import annotations

import math

import numpy as np
import pytest

from wrapfit.errors import DomainError, NotPositiveDefiniteError
from wrapfit.metrics import (
    metric_direction,
    metric_divergence,
    metric_sqrt_as,
)


def test_metric_direction() -> None:
    assert metric_direction("sqrt_as") == "lower"
    assert metric_direction("delta_sigma") == "lower"
    assert metric_direction("power") == "higher"
    with pytest.raises(ValueError, match="Unsupported metric"):
        metric_direction("rmse")


def test_sqrt_as_examples() -> None:
    assert metric_sqrt_as([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert metric_sqrt_as([math.pi], [0.0]) == pytest.approx(math.sqrt(2))
    assert metric_sqrt_as([0.1, 0.0], [0.0, 0.0]) == pytest.approx(
        math.sqrt((1 - math.cos(0.1)) / 2)
    )


def test_sqrt_as_ignores_wrapping() -> None:
    assert metric_sqrt_as([0.05], [2 * math.pi - 0.05]) == pytest.approx(
        metric_sqrt_as([0.1], [0.0])
    )
    with pytest.raises(DomainError, match="shape"):
        metric_sqrt_as([0.0, 1.0], [0.0])


def test_divergence_examples() -> None:
    identity = np.eye(3)
    assert metric_divergence(identity, identity) == 0.0
    assert metric_divergence(4 * identity, identity) == pytest.approx(9 - 3 * math.log(4) - 3)
    assert metric_divergence([[2.0]], [[1.0]]) == pytest.approx(1 - math.log(2))


def test_divergence_is_not_symmetric() -> None:
    a = np.diag([2.0, 1.0])
    b = np.eye(2)
    assert metric_divergence(a, b) != pytest.approx(metric_divergence(b, a))


def test_divergence_rejects_bad_inputs() -> None:
    with pytest.raises(DomainError, match="shape"):
        metric_divergence(np.eye(2), np.eye(3))
    with pytest.raises(NotPositiveDefiniteError, match="SPD"):
        metric_divergence(np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2))
