from __future__ import annotations

import math
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

from wrapfit.errors import DomainError, NotPositiveDefiniteError
from wrapfit.torus import spd_cholesky

MetricDirection = Literal["higher", "lower"]

_METRIC_DIRECTIONS: dict[str, MetricDirection] = {
    "sqrt_as": "lower",
    "delta_sigma": "lower",
    "swamping": "lower",
    "power": "higher",
}


def metric_direction(metric: str) -> MetricDirection:
    try:
        return _METRIC_DIRECTIONS[metric]
    except KeyError as exc:
        raise ValueError(f"Unsupported metric: {metric}") from exc


def metric_sqrt_as(mu_hat: ArrayLike, mu_true: ArrayLike) -> float:
    """Square root of the average angle separation, in [0, √2]."""
    estimate = np.atleast_1d(np.asarray(mu_hat, dtype=float))
    truth = np.atleast_1d(np.asarray(mu_true, dtype=float))
    if estimate.shape != truth.shape:
        raise DomainError(f"location vectors differ in shape ({estimate.shape} vs {truth.shape})")
    value = float(np.mean(1.0 - np.cos(estimate - truth)))
    return math.sqrt(max(value, 0.0))


def metric_divergence(sigma_hat: ArrayLike, sigma_true: ArrayLike) -> float:
    """trace(Σ̂Σ⁻¹) − log det(Σ̂Σ⁻¹) − p. Not symmetric in its arguments."""
    estimate = np.atleast_2d(np.asarray(sigma_hat, dtype=float))
    truth = np.atleast_2d(np.asarray(sigma_true, dtype=float))
    if estimate.shape != truth.shape:
        raise DomainError(f"scatter matrices differ in shape ({estimate.shape} vs {truth.shape})")
    p = truth.shape[0]
    try:
        chol_true = spd_cholesky(truth)
        chol_hat = spd_cholesky(estimate)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(f"divergence needs SPD inputs: {exc}") from exc
    solved = np.linalg.solve(chol_true, chol_hat)
    trace = float(np.sum(solved * solved))
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol_hat))) - np.sum(np.log(np.diag(chol_true))))
    return max(trace - log_det - p, 0.0)
