from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from wrapfit.errors import (
    DegenerateSampleError,
    DomainError,
    LatticeCapError,
    NotPositiveDefiniteError,
)

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

TWO_PI = 2.0 * math.pi
LATTICE_CAP = 1_000_000
RESULTANT_TOL = 1e-12
RIDGE_ATTEMPTS = 8


def wrap(x: ArrayLike) -> FloatArray:
    values = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError("wrap requires finite angles")
    wrapped = np.mod(values, TWO_PI)
    # np.mod rounds tiny negatives up to exactly 2π
    return np.where(wrapped >= TWO_PI, 0.0, wrapped)


def to_signed(x: ArrayLike) -> FloatArray:
    """Map angles to [-π, π)."""
    return wrap(np.asarray(x, dtype=float) + math.pi) - math.pi


def unwrap_to_cell(y: ArrayLike, mu: ArrayLike) -> FloatArray:
    """Relocate angles into the cell T(μ) = ×(μ_d − π, μ_d + π]."""
    mu_arr = np.asarray(mu, dtype=float)
    offset = math.pi - wrap(math.pi - (np.asarray(y, dtype=float) - mu_arr))
    return mu_arr + offset


def angular_separation(mu_a: ArrayLike, mu_b: ArrayLike) -> FloatArray:
    # 2|sin(Δ/2)| == √(2(1 − cos Δ)) without cancellation near zero
    delta = np.asarray(mu_a, dtype=float) - np.asarray(mu_b, dtype=float)
    return 2.0 * np.abs(np.sin(0.5 * delta))


@dataclass(frozen=True, slots=True)
class LatticeBox:
    J: int
    p: int

    def __post_init__(self) -> None:
        if self.J < 0:
            raise DomainError(f"lattice half-width J must be >= 0 (received {self.J})")
        if self.p < 1:
            raise DomainError(f"dimension p must be >= 1 (received {self.p})")

    @property
    def size(self) -> int:
        return int((2 * self.J + 1) ** self.p)


def lattice_enumerate(box: LatticeBox, *, cap: int = LATTICE_CAP) -> IntArray:
    """Wrapping coefficients of the box, one row per vector, lexicographic order.

    The returned array is shared and read-only.
    """
    if box.size > cap:
        raise LatticeCapError(
            f"lattice box J={box.J}, p={box.p} has {box.size} points (cap {cap})"
        )
    return _lattice(box.J, box.p)


@lru_cache(maxsize=64)
def _lattice(J: int, p: int) -> IntArray:
    axis = range(-J, J + 1)
    grid = np.array(list(itertools.product(axis, repeat=p)), dtype=np.int64)
    grid = grid.reshape(-1, p)
    grid.setflags(write=False)
    return grid


def spd_cholesky(sigma: ArrayLike) -> FloatArray:
    matrix = np.asarray(sigma, dtype=float)
    try:
        return scipy.linalg.cholesky(matrix, lower=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(
            f"scatter matrix is not positive definite: {exc}"
        ) from exc


def ridge_repair(sigma: ArrayLike, ridge: float) -> tuple[FloatArray, float]:
    """Return (Σ', r) with Σ' = Σ + r·I positive definite; r = 0 when Σ already is."""
    matrix = 0.5 * (np.asarray(sigma, dtype=float) + np.asarray(sigma, dtype=float).T)
    try:
        spd_cholesky(matrix)
        return matrix, 0.0
    except NotPositiveDefiniteError:
        if ridge <= 0:
            raise

    p = matrix.shape[0]
    trace = float(np.trace(matrix))
    amount = ridge * (trace / p if trace > 0 else 1.0)
    for _ in range(RIDGE_ATTEMPTS):
        candidate = matrix + amount * np.eye(p)
        try:
            spd_cholesky(candidate)
        except NotPositiveDefiniteError:
            amount *= 10.0
            continue
        logger.warning("ridge %.3g added to a non positive definite scatter matrix", amount)
        return candidate, amount
    raise NotPositiveDefiniteError(
        f"ridge repair failed after {RIDGE_ATTEMPTS} attempts (last ridge {amount:.3g})"
    )


@dataclass(frozen=True, slots=True, eq=False)
class WrappedModelParams:
    mu: FloatArray
    sigma: FloatArray
    chol: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if mu.ndim != 1:
            raise DomainError("mu must be a vector")
        p = mu.shape[0]
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (p, p):
            raise DomainError(f"sigma must have shape ({p}, {p}), got {sigma.shape}")
        if not np.all(np.isfinite(sigma)):
            raise DomainError("sigma must be finite")
        if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-12):
            raise DomainError("sigma must be symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        object.__setattr__(self, "mu", wrap(mu))
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", spd_cholesky(sigma))

    @classmethod
    def isotropic(cls, mu: ArrayLike, scale: float) -> WrappedModelParams:
        mu_arr = np.atleast_1d(np.asarray(mu, dtype=float))
        return cls(mu_arr, scale**2 * np.eye(mu_arr.shape[0]))

    @property
    def p(self) -> int:
        return int(self.mu.shape[0])

    @property
    def log_det(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.chol))))

    def with_sigma(self, sigma: ArrayLike) -> WrappedModelParams:
        return WrappedModelParams(self.mu, np.asarray(sigma, dtype=float))

    def to_dict(self) -> dict[str, Any]:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}


def _normal_log_h(t: FloatArray) -> FloatArray:
    return -0.5 * np.asarray(t, dtype=float)


def _normal_dlog_h(t: FloatArray) -> FloatArray:
    return np.full_like(np.asarray(t, dtype=float), -0.5)


def _normal_log_c(p: int) -> float:
    return -0.5 * p * math.log(TWO_PI)


@dataclass(frozen=True, slots=True)
class EllipticalGenerator:
    """Density generator h with c_p |Σ|^{-1/2} h(d²) integrating to one.

    ``dlog_h`` is h'/h; ``log_c`` gives log c_p.
    """

    name: str
    log_h: Callable[[FloatArray], FloatArray]
    dlog_h: Callable[[FloatArray], FloatArray]
    log_c: Callable[[int], float]

    def h(self, t: ArrayLike) -> FloatArray:
        return np.exp(self.log_h(np.asarray(t, dtype=float)))

    def hprime(self, t: ArrayLike) -> FloatArray:
        values = np.asarray(t, dtype=float)
        return self.dlog_h(values) * self.h(values)


NORMAL = EllipticalGenerator(
    name="normal",
    log_h=_normal_log_h,
    dlog_h=_normal_dlog_h,
    log_c=_normal_log_c,
)


def adequate_J(params: WrappedModelParams) -> int:
    """Smallest J with μ_d ± 4√Σ_dd inside (−2πJ, 2πJ] for every d."""
    scale = 4.0 * np.sqrt(np.diag(params.sigma))
    upper = np.ceil((params.mu + scale) / TWO_PI)
    lower = np.floor((scale - params.mu) / TWO_PI) + 1.0
    return int(max(1.0, float(upper.max()), float(lower.max())))


def resolve_box(params: WrappedModelParams, J: int | None = None) -> LatticeBox:
    adequate = adequate_J(params)
    if J is None:
        return LatticeBox(adequate, params.p)
    if J < adequate:
        logger.debug("lattice J=%d below the adequate J=%d", J, adequate)
    return LatticeBox(min(adequate, J), params.p)


def as_points(y: ArrayLike, p: int) -> tuple[FloatArray, bool]:
    """Coerce input to an (n, p) array; the flag tells whether a single point was given."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 0:
        if p != 1:
            raise DomainError(f"scalar input given for dimension p={p}")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if arr.shape[0] == p:
            return arr.reshape(1, p), True
        if p == 1:
            return arr.reshape(-1, 1), False
    if arr.ndim == 2 and arr.shape[1] == p:
        return arr, False
    raise DomainError(f"expected points of dimension {p}, got shape {arr.shape}")


def _squeeze(values: FloatArray, single: bool) -> Any:
    return float(values[0]) if single else values


def mahalanobis_from_diff(diff: FloatArray, chol: FloatArray) -> FloatArray:
    p = chol.shape[0]
    flat = np.asarray(diff, dtype=float).reshape(-1, p)
    solved = scipy.linalg.solve_triangular(chol, flat.T, lower=True)
    return np.sum(solved * solved, axis=0).reshape(np.shape(diff)[:-1])


def mahalanobis_sq(x: ArrayLike, params: WrappedModelParams) -> Any:
    points, single = as_points(x, params.p)
    return _squeeze(mahalanobis_from_diff(points - params.mu, params.chol), single)


def lattice_diffs(
    points: FloatArray, params: WrappedModelParams, box: LatticeBox
) -> FloatArray:
    """(n, K, p) array of y_i + 2πj − μ over the box, with y_i wrapped first."""
    shifts = TWO_PI * lattice_enumerate(box)
    base = wrap(points) - params.mu
    return base[:, None, :] + shifts[None, :, :]


def log_wrapped_density(
    y: ArrayLike,
    params: WrappedModelParams,
    gen: EllipticalGenerator = NORMAL,
    box: LatticeBox | None = None,
) -> Any:
    points, single = as_points(y, params.p)
    lattice_box = resolve_box(params) if box is None else box
    d2 = mahalanobis_from_diff(lattice_diffs(points, params, lattice_box), params.chol)
    log_norm = gen.log_c(params.p) - 0.5 * params.log_det
    values = log_norm + logsumexp(gen.log_h(d2), axis=1)
    return _squeeze(values, single)


def wrapped_density(
    y: ArrayLike,
    params: WrappedModelParams,
    gen: EllipticalGenerator = NORMAL,
    box: LatticeBox | None = None,
) -> Any:
    return np.exp(log_wrapped_density(y, params, gen, box))


def log_likelihood(
    data: ArrayLike,
    params: WrappedModelParams,
    gen: EllipticalGenerator = NORMAL,
    box: LatticeBox | None = None,
) -> float:
    points, _ = as_points(data, params.p)
    if points.shape[0] < 1:
        raise DomainError("log_likelihood requires at least one observation")
    return float(np.sum(log_wrapped_density(points, params, gen, box)))


def sample_wrapped(
    params: WrappedModelParams, size: int, rng: np.random.Generator
) -> FloatArray:
    linear = rng.multivariate_normal(params.mu, params.sigma, size=size, method="cholesky")
    return wrap(linear)


def mean_resultant_length(angles: ArrayLike, axis: int = 0) -> Any:
    values = np.asarray(angles, dtype=float)
    length = np.hypot(np.mean(np.cos(values), axis=axis), np.mean(np.sin(values), axis=axis))
    return float(length) if np.ndim(length) == 0 else length


def circular_mean(angles: ArrayLike, axis: int = 0) -> Any:
    values = np.asarray(angles, dtype=float)
    cos_mean = np.mean(np.cos(values), axis=axis)
    sin_mean = np.mean(np.sin(values), axis=axis)
    if np.any(np.hypot(cos_mean, sin_mean) <= RESULTANT_TOL):
        raise DegenerateSampleError("circular mean undefined: resultant length is zero")
    mean = wrap(np.arctan2(sin_mean, cos_mean))
    return float(mean) if np.ndim(mean) == 0 else mean


def circular_correlation(a: ArrayLike, b: ArrayLike) -> float:
    first = np.asarray(a, dtype=float)
    second = np.asarray(b, dtype=float)
    if first.shape != second.shape:
        raise DomainError("circular_correlation requires samples of equal length")
    sin_a = np.sin(first - circular_mean(first))
    sin_b = np.sin(second - circular_mean(second))
    denominator = math.sqrt(float(np.sum(sin_a**2) * np.sum(sin_b**2)))
    if denominator <= RESULTANT_TOL:
        raise DegenerateSampleError("circular correlation undefined: zero dispersion")
    return float(np.clip(np.sum(sin_a * sin_b) / denominator, -1.0, 1.0))


def flat_torus_replicates(
    y: ArrayLike, J: int
) -> tuple[FloatArray, IntArray, IntArray]:
    """Copies yᵢ + 2πj over the box {−J..J}^p for plotting on the flat torus.

    Returns (replicates, j rows, observation index), grouped by j in
    lexicographic order; J=0 is the identity copy.
    """
    points = np.atleast_2d(np.asarray(y, dtype=float))
    n, p = points.shape
    lattice = lattice_enumerate(LatticeBox(J, p))
    replicates = (points[None, :, :] + TWO_PI * lattice[:, None, :]).reshape(-1, p)
    j_rows = np.repeat(lattice, n, axis=0)
    index = np.tile(np.arange(n), lattice.shape[0])
    return replicates, j_rows, index
