from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import spearmanr

from wrapfit.errors import DomainError
from wrapfit.estimators import EstimatorKind, FitConfig, fit, prepare_data
from wrapfit.torus import FloatArray, WrappedModelParams, mean_resultant_length

logger = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 15
_DISTANCE_GRID = (0.05, 1.5)


def scale_estimate(data: ArrayLike) -> float:
    """Median over coordinates of √(−2 log ρ̂)."""
    y = prepare_data(data)
    rho = np.atleast_1d(mean_resultant_length(y, axis=0))
    sd = np.sqrt(-2.0 * np.log(np.clip(rho, np.finfo(float).tiny, 1.0)))
    return float(np.median(sd))


def default_bandwidth_grid(
    data: ArrayLike,
    size: int = DEFAULT_GRID_SIZE,
    *,
    h_min: float | None = None,
    h_max: float | None = None,
    kind: EstimatorKind | None = None,
) -> FloatArray:
    """Log-spaced grid over [σ̂/8, 2σ̂].

    The distance scheme smooths log squared distances, so its grid spans a
    fixed log-scale range instead.
    """
    if size < 1:
        raise DomainError(f"grid size must be >= 1 (received {size})")
    if kind is EstimatorKind.WCEM_DIST:
        low, high = _DISTANCE_GRID
    else:
        sigma_hat = scale_estimate(data)
        if not math.isfinite(sigma_hat) or sigma_hat <= 0:
            raise DomainError("cannot derive a bandwidth grid from degenerate data")
        low, high = sigma_hat / 8.0, 2.0 * sigma_hat
    low = low if h_min is None else h_min
    high = high if h_max is None else h_max
    if not 0 < low <= high:
        raise DomainError(f"invalid bandwidth range [{low}, {high}]")
    return np.geomspace(low, high, size)


def validate_grid(h_grid: ArrayLike) -> FloatArray:
    grid = np.asarray(h_grid, dtype=float).ravel()
    if grid.size == 0:
        raise DomainError("bandwidth grid is empty")
    if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise DomainError("bandwidths must be finite and > 0")
    if np.any(np.diff(grid) <= 0):
        raise DomainError("bandwidth grid must be strictly increasing")
    return grid


@dataclass(slots=True)
class MonitoringResult:
    kind: EstimatorKind
    h_grid: FloatArray
    weights: FloatArray
    params: list[WrappedModelParams | None]
    errors: list[str | None]
    selected_h: float | None = None

    @property
    def mean_weights(self) -> FloatArray:
        with np.errstate(invalid="ignore"):
            return np.nanmean(self.weights, axis=0) if self.weights.size else self.weights

    @property
    def downweighting(self) -> list[float | None]:
        return [
            None if error is not None else float(1.0 - w)
            for w, error in zip(self.mean_weights, self.errors, strict=True)
        ]

    def long_rows(self) -> Iterator[dict[str, Any]]:
        for j, h in enumerate(self.h_grid):
            if self.errors[j] is not None:
                continue
            for i in range(self.weights.shape[0]):
                yield {"observation": i, "h": float(h), "weight": float(self.weights[i, j])}

    def curve_rows(self) -> list[dict[str, Any]]:
        return [
            {"h": float(h), "downweighting": level, "error": error}
            for h, level, error in zip(self.h_grid, self.downweighting, self.errors, strict=True)
        ]

    def trend(self) -> float | None:
        """Spearman correlation between h and the mean weight over successful grid points."""
        ok = [j for j, error in enumerate(self.errors) if error is None]
        if len(ok) < 3:
            return None
        mean_weights = self.mean_weights[ok]
        if np.ptp(mean_weights) == 0:
            return None
        rho = spearmanr(self.h_grid[ok], mean_weights).statistic
        return float(rho)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": str(self.kind),
            "h_grid": self.h_grid.tolist(),
            "downweighting": self.downweighting,
            "errors": list(self.errors),
            "selected_h": self.selected_h,
            "trend": self.trend(),
        }


def monitor_bandwidth(
    data: ArrayLike,
    h_grid: ArrayLike,
    kind: EstimatorKind | str = EstimatorKind.WCEM_UNWRAP,
    config: FitConfig | None = None,
    *,
    seed: int | None = None,
    selected_h: float | None = None,
) -> MonitoringResult:
    """Refit across the grid, warm-starting each h from the previous fit."""
    estimator = EstimatorKind(kind)
    if not estimator.weighted:
        raise DomainError(f"monitoring needs a weighted estimator, not '{estimator}'")
    grid = validate_grid(h_grid)
    y = prepare_data(data)
    base = FitConfig() if config is None else config

    weights = np.full((y.shape[0], grid.size), np.nan)
    params: list[WrappedModelParams | None] = []
    errors: list[str | None] = []
    warm: WrappedModelParams | None = None
    for j, h in enumerate(grid):
        try:
            kind_config = base.with_bandwidth(float(h), estimator)
            result = fit(y, estimator, kind_config, initial=warm, seed=seed)
        except Exception as exc:  # noqa: BLE001
            logger.warning("monitoring %s at h=%.4g failed: %s", estimator, h, exc)
            params.append(None)
            errors.append(str(exc))
            continue
        weights[:, j] = result.weights
        params.append(result.params)
        errors.append(None)
        warm = result.params
        logger.info(
            "monitoring %s h=%.4g: 1 - mean weight = %.4f", estimator, h, 1 - result.mean_weight
        )
    return MonitoringResult(estimator, grid, weights, params, errors, selected_h)

