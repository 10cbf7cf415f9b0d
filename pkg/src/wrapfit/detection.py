from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from wrapfit.errors import DomainError
from wrapfit.estimators import FitResult
from wrapfit.kde import DistanceReference, chi2_quantile, unwrapped_distance_sample
from wrapfit.torus import FloatArray, WrappedModelParams, mahalanobis_from_diff

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.01
DEFAULT_WEIGHT_THRESHOLD = 0.5


@dataclass(slots=True)
class DetectionReport:
    flags: np.ndarray
    d2: FloatArray
    cutoff: float
    alpha: float
    weight_flags: np.ndarray
    reference: DistanceReference = "chi2"

    @property
    def n_flagged(self) -> int:
        return int(np.count_nonzero(self.flags))

    @property
    def flagged_fraction(self) -> float:
        return float(np.mean(self.flags)) if self.flags.size else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "cutoff": self.cutoff,
            "reference": self.reference,
            "n_flagged": self.n_flagged,
            "flagged_fraction": self.flagged_fraction,
            "n_weight_flagged": int(np.count_nonzero(self.weight_flags)),
        }


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must be in (0, 1) (received {alpha})")


def distance_cutoff(
    params: WrappedModelParams,
    alpha: float = DEFAULT_ALPHA,
    reference: DistanceReference = "chi2",
    *,
    mc_size: int = 100_000,
    seed: int = 0,
) -> float:
    _check_alpha(alpha)
    if reference == "chi2":
        return chi2_quantile(1.0 - alpha, params.p)
    if reference == "chi2_unwrapped":
        sample = unwrapped_distance_sample(params, mc_size, seed)
        return float(np.quantile(sample, 1.0 - alpha))
    raise DomainError(f"Unsupported distance reference '{reference}'")


def robust_distances(fit: FitResult) -> FloatArray:
    return mahalanobis_from_diff(fit.unwrapped - fit.params.mu, fit.params.chol)


def detect_by_weight(fit: FitResult, threshold: float = DEFAULT_WEIGHT_THRESHOLD) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"weight threshold must be in (0, 1) (received {threshold})")
    return np.asarray(fit.weights < threshold)


def detect_by_distance(
    fit: FitResult,
    alpha: float = DEFAULT_ALPHA,
    *,
    reference: DistanceReference = "chi2",
    weight_threshold: float = DEFAULT_WEIGHT_THRESHOLD,
    mc_size: int = 100_000,
    seed: int = 0,
) -> DetectionReport:
    cutoff = distance_cutoff(fit.params, alpha, reference, mc_size=mc_size, seed=seed)
    d2 = robust_distances(fit)
    flags = d2 > cutoff
    report = DetectionReport(
        flags=flags,
        d2=d2,
        cutoff=cutoff,
        alpha=alpha,
        weight_flags=detect_by_weight(fit, weight_threshold),
        reference=reference,
    )
    logger.info(
        "flagged %d of %d observations (cutoff %.4f, alpha %g)",
        report.n_flagged,
        flags.size,
        cutoff,
        alpha,
    )
    return report


def swamping_and_power(
    flags: ArrayLike, true_outlier_mask: ArrayLike
) -> tuple[float, float | None]:
    """False-flag rate among genuine points and hit rate among outliers.

    Power is None when there are no true outliers.
    """
    flagged = np.asarray(flags, dtype=bool)
    outliers = np.asarray(true_outlier_mask, dtype=bool)
    if flagged.shape != outliers.shape:
        raise DomainError(
            f"flags and outlier mask differ in length ({flagged.size} vs {outliers.size})"
        )
    genuine = ~outliers
    swamping = float(np.mean(flagged[genuine])) if np.any(genuine) else 0.0
    power = float(np.mean(flagged[outliers])) if np.any(outliers) else None
    return swamping, power


@dataclass(slots=True)
class ToleranceEllipse:
    dims: tuple[int, int]
    points: FloatArray


def tolerance_ellipses(
    params: WrappedModelParams, level: float = 0.99, n_points: int = 181
) -> list[ToleranceEllipse]:
    """Pairwise projections of the level tolerance ellipsoid on the unwrapped scale.

    Each ellipse uses the marginal 2×2 scatter and the χ²_p quantile.
    """
    if params.p < 2:
        raise DomainError("tolerance ellipses need p >= 2")
    if n_points < 3:
        raise DomainError("n_points must be >= 3")
    radius = math.sqrt(chi2_quantile(level, params.p))
    angles = np.linspace(0.0, 2.0 * math.pi, n_points)
    circle = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    ellipses: list[ToleranceEllipse] = []
    for r, s in itertools.combinations(range(params.p), 2):
        block = params.sigma[np.ix_([r, s], [r, s])]
        chol = np.linalg.cholesky(block)
        points = params.mu[[r, s]] + radius * circle @ chol.T
        ellipses.append(ToleranceEllipse((r, s), points))
    return ellipses
