from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Literal

import numpy as np
from numpy.typing import ArrayLike
from scipy import stats
from scipy.special import gammaincinv, logsumexp

from wrapfit.errors import DomainError, LatticeCapError
from wrapfit.torus import (
    LATTICE_CAP,
    NORMAL,
    TWO_PI,
    EllipticalGenerator,
    FloatArray,
    LatticeBox,
    WrappedModelParams,
    as_points,
    log_wrapped_density,
    mahalanobis_from_diff,
    sample_wrapped,
    unwrap_to_cell,
    wrap,
)

logger = logging.getLogger(__name__)

DistanceReference = Literal["chi2", "chi2_unwrapped"]

_LOG_SQRT_2PI = 0.5 * math.log(TWO_PI)
_CHUNK_ELEMENTS = 2_000_000
_HERMITE_NODES, _HERMITE_WEIGHTS = np.polynomial.hermite.hermgauss(48)
MIN_MC_SIZE = 1000


@dataclass(frozen=True, slots=True)
class BandwidthMatrix:
    h: float
    p: int = 1

    def __post_init__(self) -> None:
        if not math.isfinite(self.h) or self.h <= 0:
            raise DomainError(f"bandwidth h must be > 0 (received {self.h})")
        if self.p < 1:
            raise DomainError(f"dimension p must be >= 1 (received {self.p})")

    @property
    def matrix(self) -> FloatArray:
        return self.h**2 * np.eye(self.p)


def _h(H: BandwidthMatrix | float) -> float:
    if isinstance(H, BandwidthMatrix):
        return H.h
    return BandwidthMatrix(float(H)).h


def _row_chunks(rows: int, per_row: int) -> list[slice]:
    step = max(1, _CHUNK_ELEMENTS // max(per_row, 1))
    return [slice(start, min(start + step, rows)) for start in range(0, rows, step)]


def log_torus_kde(
    y: ArrayLike,
    data: ArrayLike,
    H: BandwidthMatrix | float,
    box: LatticeBox,
) -> Any:
    """Log of the wrapped-normal kernel density estimate on the torus.

    The kernel covariance is diagonal, so the lattice sum over the box factorizes
    per coordinate; the result equals the mean of wrapped_density(y; y_i, H, box).
    """
    h = _h(H)
    sample, _ = as_points(data, box.p)
    points, single = as_points(y, box.p)
    if sample.shape[0] < 1:
        raise DomainError("torus_kde requires at least one observation")
    if box.size > LATTICE_CAP:
        raise LatticeCapError(f"lattice box has {box.size} points (cap {LATTICE_CAP})")

    sample = wrap(sample)
    points = wrap(points)
    n, p = sample.shape
    shifts = TWO_PI * np.arange(-box.J, box.J + 1, dtype=float)
    out = np.empty(points.shape[0])
    for rows in _row_chunks(points.shape[0], n * p * shifts.size):
        diff = points[rows, None, :] - sample[None, :, :]
        z = (diff[..., None] + shifts) / h
        log_marginal = logsumexp(-0.5 * z * z, axis=-1) - math.log(h) - _LOG_SQRT_2PI
        out[rows] = logsumexp(log_marginal.sum(axis=-1), axis=1) - math.log(n)
    return float(out[0]) if single else out


def torus_kde(
    y: ArrayLike, data: ArrayLike, H: BandwidthMatrix | float, box: LatticeBox
) -> Any:
    return np.exp(log_torus_kde(y, data, H, box))


def log_linear_kde(x: ArrayLike, data: ArrayLike, H: BandwidthMatrix | float) -> Any:
    h = _h(H)
    sample = np.asarray(data, dtype=float)
    if sample.ndim == 1:
        sample = sample.reshape(-1, 1)
    if sample.shape[0] < 1:
        raise DomainError("linear_kde requires at least one observation")
    n, p = sample.shape
    points, single = as_points(x, p)
    out = np.empty(points.shape[0])
    log_norm = -p * (math.log(h) + _LOG_SQRT_2PI) - math.log(n)
    for rows in _row_chunks(points.shape[0], n * p):
        z = (points[rows, None, :] - sample[None, :, :]) / h
        out[rows] = logsumexp(-0.5 * np.sum(z * z, axis=-1), axis=1) + log_norm
    return float(out[0]) if single else out


def linear_kde(x: ArrayLike, data: ArrayLike, H: BandwidthMatrix | float) -> Any:
    return np.exp(log_linear_kde(x, data, H))


def smoothed_params(params: WrappedModelParams, H: BandwidthMatrix | float) -> WrappedModelParams:
    h = _h(H)
    return WrappedModelParams(params.mu, params.sigma + h**2 * np.eye(params.p))


def log_smoothed_wn_model(
    y: ArrayLike,
    params: WrappedModelParams,
    H: BandwidthMatrix | float,
    box: LatticeBox,
    gen: EllipticalGenerator = NORMAL,
) -> Any:
    return log_wrapped_density(y, smoothed_params(params, H), gen, box)


def smoothed_wn_model(
    y: ArrayLike,
    params: WrappedModelParams,
    H: BandwidthMatrix | float,
    box: LatticeBox,
) -> Any:
    return np.exp(log_smoothed_wn_model(y, params, H, box))


def _log_scale(sample: ArrayLike) -> FloatArray:
    values = np.asarray(sample, dtype=float).ravel()
    if values.size == 0:
        raise DomainError("distance sample must be non-empty")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise DomainError("squared distances must be finite and non-negative")
    return np.log(np.maximum(values, np.finfo(float).tiny))


def normal_reference_bandwidth(sample: ArrayLike) -> float:
    """Normal-reference bandwidth for the log-distance scale."""
    z = _log_scale(sample)
    if z.size < 2:
        return 1.0
    sd = float(np.std(z, ddof=1))
    q75, q25 = np.percentile(z, [75.0, 25.0])
    iqr = float(q75 - q25) / 1.349
    spread = min(sd, iqr) if iqr > 0 else sd
    if spread <= 0:
        return 1.0
    return 1.06 * spread * z.size ** (-0.2)


def log_distance_kde(
    d2: ArrayLike, sample: ArrayLike, bandwidth: float | None = None
) -> Any:
    """Log density of squared distances: Gaussian KDE of log(d²) divided by d²."""
    z_sample = _log_scale(sample)
    b = normal_reference_bandwidth(sample) if bandwidth is None else float(bandwidth)
    if b <= 0:
        raise DomainError(f"distance bandwidth must be > 0 (received {b})")
    t = np.atleast_1d(np.asarray(d2, dtype=float))
    out = np.full(t.shape, -np.inf)
    positive = t > 0
    z = np.log(t[positive])
    log_norm = -math.log(z_sample.size * b) - _LOG_SQRT_2PI
    values = np.empty(z.shape)
    for rows in _row_chunks(z.size, z_sample.size):
        u = (z[rows, None] - z_sample[None, :]) / b
        values[rows] = logsumexp(-0.5 * u * u, axis=1) + log_norm
    out[positive] = values - z
    return float(out[0]) if np.ndim(d2) == 0 else out


def distance_kde(d2: ArrayLike, sample: ArrayLike, bandwidth: float | None = None) -> Any:
    return np.exp(log_distance_kde(d2, sample, bandwidth))


def chi2_density(d2: ArrayLike, p: int) -> Any:
    values = stats.chi2.pdf(np.asarray(d2, dtype=float), p)
    return float(values) if np.ndim(values) == 0 else values


def chi2_logpdf(d2: ArrayLike, p: int) -> FloatArray:
    return np.asarray(stats.chi2.logpdf(np.asarray(d2, dtype=float), p), dtype=float)


def chi2_quantile(prob: float, p: int) -> float:
    if not 0.0 < prob < 1.0:
        raise DomainError(f"probability must be in (0, 1) (received {prob})")
    return float(2.0 * gammaincinv(0.5 * p, prob))


def log_smoothed_on_log_scale(
    d2: ArrayLike, log_reference: Any, bandwidth: float
) -> FloatArray:
    """Log of (reference convolved with the log-scale Gaussian kernel), per unit d².

    ``log_reference`` maps squared distances to log reference densities.
    """
    t = np.atleast_1d(np.asarray(d2, dtype=float))
    out = np.full(t.shape, -np.inf)
    positive = t > 0
    z = np.log(t[positive])
    nodes = z[:, None] - math.sqrt(2.0) * bandwidth * _HERMITE_NODES[None, :]
    log_g = np.asarray(log_reference(np.exp(nodes)), dtype=float) + nodes
    smoothed = logsumexp(log_g, axis=1, b=_HERMITE_WEIGHTS[None, :]) - 0.5 * math.log(math.pi)
    out[positive] = smoothed - z
    return out


@lru_cache(maxsize=32)
def _cached_unwrapped_sample(
    mu: tuple[float, ...], sigma: tuple[float, ...], mc_size: int, seed: int
) -> FloatArray:
    p = len(mu)
    params = WrappedModelParams(np.array(mu), np.array(sigma).reshape(p, p))
    rng = np.random.default_rng(seed)
    y = sample_wrapped(params, mc_size, rng)
    x = unwrap_to_cell(y, params.mu)
    d2 = mahalanobis_from_diff(x - params.mu, params.chol)
    d2.setflags(write=False)
    return d2


def unwrapped_distance_sample(
    params: WrappedModelParams, mc_size: int = 100_000, seed: int = 0
) -> FloatArray:
    """Monte Carlo squared distances of wrapped draws relocated to T(μ)."""
    if mc_size < MIN_MC_SIZE:
        raise DomainError(f"mc_size must be >= {MIN_MC_SIZE} (received {mc_size})")
    return _cached_unwrapped_sample(
        tuple(params.mu.tolist()), tuple(params.sigma.ravel().tolist()), mc_size, seed
    )


def unwrapped_distance_support(params: WrappedModelParams) -> float:
    """Upper end of the squared-distance support under the unwrapped model."""
    vertices = np.array(
        list(itertools.product((-math.pi, math.pi), repeat=params.p)), dtype=float
    )
    return float(np.max(mahalanobis_from_diff(vertices, params.chol)))


def chi2_unwrapped_density(
    d2: ArrayLike,
    params: WrappedModelParams,
    mc_size: int = 100_000,
    *,
    seed: int = 0,
    bandwidth: float | None = None,
) -> Any:
    """Density of unwrapped squared distances, zero at and beyond the support bound."""
    sample = unwrapped_distance_sample(params, mc_size, seed)
    inside = np.asarray(d2, dtype=float) < unwrapped_distance_support(params)
    density = np.where(inside, distance_kde(d2, sample, bandwidth), 0.0)
    return float(density) if np.ndim(d2) == 0 else density
