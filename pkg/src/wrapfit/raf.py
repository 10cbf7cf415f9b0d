from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from numpy.typing import ArrayLike

from wrapfit.errors import DomainError
from wrapfit.kde import (
    BandwidthMatrix,
    DistanceReference,
    chi2_logpdf,
    log_distance_kde,
    log_linear_kde,
    log_smoothed_on_log_scale,
    log_smoothed_wn_model,
    log_torus_kde,
    normal_reference_bandwidth,
    smoothed_params,
    unwrapped_distance_sample,
)
from wrapfit.torus import (
    NORMAL,
    FloatArray,
    LatticeBox,
    WrappedModelParams,
    as_points,
    log_wrapped_density,
    mahalanobis_from_diff,
    resolve_box,
)

RafName = Literal["gkl", "pwd", "schi", "mle"]
SUPPORTED_RAFS = ("gkl", "pwd", "schi", "mle")


@dataclass(frozen=True, slots=True)
class RafKind:
    """Residual adjustment function.

    ``mle`` is A(δ) = δ; it yields unit weights and reduces every weighted
    estimator to its unweighted counterpart.
    """

    name: RafName = "gkl"
    tau: float = 0.25
    lam: float = 0.0

    def __post_init__(self) -> None:
        if self.name not in SUPPORTED_RAFS:
            allowed = ", ".join(SUPPORTED_RAFS)
            raise DomainError(f"Unsupported RAF '{self.name}'. Allowed: {allowed}")
        if self.name == "gkl" and not 0.0 < self.tau <= 1.0:
            raise DomainError(f"GKL tau must be in (0, 1] (received {self.tau})")
        if self.name == "pwd" and not self.lam > -1.0:
            raise DomainError(f"PWD lambda must be > -1 (received {self.lam})")

    @classmethod
    def gkl(cls, tau: float = 0.25) -> RafKind:
        return cls("gkl", tau=tau)

    @classmethod
    def pwd(cls, lam: float) -> RafKind:
        return cls("pwd", lam=lam)

    @classmethod
    def schi(cls) -> RafKind:
        return cls("schi")

    @classmethod
    def identity(cls) -> RafKind:
        return cls("mle")

    @property
    def label(self) -> str:
        if self.name == "gkl":
            return f"gkl(tau={self.tau:g})"
        if self.name == "pwd":
            return f"pwd(lambda={self.lam:g})"
        return self.name

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "tau": self.tau, "lam": self.lam}


def _scalar_or_array(values: FloatArray, like: ArrayLike) -> Any:
    return float(values) if np.ndim(like) == 0 else values


def raf_eval(kind: RafKind, delta: ArrayLike) -> Any:
    d = np.asarray(delta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind.name == "gkl":
            values = np.log1p(kind.tau * d) / kind.tau
        elif kind.name == "pwd":
            power = kind.lam + 1.0
            values = np.expm1(power * np.log1p(d)) / power
        elif kind.name == "schi":
            values = 2.0 * d / (d + 2.0)
        else:
            values = d.copy()
    return _scalar_or_array(np.asarray(values, dtype=float), delta)


def raf_deriv(kind: RafKind, delta: ArrayLike) -> Any:
    d = np.asarray(delta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind.name == "gkl":
            values = 1.0 / (1.0 + kind.tau * d)
        elif kind.name == "pwd":
            values = np.exp(kind.lam * np.log1p(d))
        elif kind.name == "schi":
            values = 4.0 / (d + 2.0) ** 2
        else:
            values = np.ones_like(d)
    return _scalar_or_array(np.asarray(values, dtype=float), delta)


def _weight_at_infinity(kind: RafKind) -> float:
    if kind.name == "mle":
        return 1.0
    if kind.name == "pwd" and kind.lam >= 0.0:
        return 1.0
    return 0.0


def weight(delta: ArrayLike, kind: RafKind) -> Any:
    d = np.asarray(delta, dtype=float)
    if np.any(np.isnan(d)) or np.any(d < -1.0 - 1e-12):
        raise DomainError("Pearson residuals must be >= -1")
    d = np.maximum(d, -1.0)
    if kind.name == "mle":
        return _scalar_or_array(np.ones_like(d), delta)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        numerator = np.maximum(np.asarray(raf_eval(kind, d)) + 1.0, 0.0)
        ratio = numerator / (d + 1.0)
    boundary = np.where(numerator > 0.0, 1.0, 0.0)
    values = np.where(d + 1.0 > 0.0, np.minimum(1.0, ratio), boundary)
    values = np.where(np.isposinf(d), _weight_at_infinity(kind), values)
    return _scalar_or_array(np.asarray(values, dtype=float), delta)


def pearson_from_logs(log_f: ArrayLike, log_m: ArrayLike) -> Any:
    """δ = f/m − 1 from log densities.

    Zero model density gives +∞ (0 when the estimate is zero as well).
    """
    lf = np.asarray(log_f, dtype=float)
    lm = np.asarray(log_m, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        delta = np.expm1(lf - lm)
    model_zero = np.isneginf(lm)
    delta = np.where(model_zero & np.isneginf(lf), 0.0, delta)
    delta = np.where(model_zero & ~np.isneginf(lf), np.inf, delta)
    return _scalar_or_array(np.asarray(delta, dtype=float), log_f)


def residual_torus(
    y: ArrayLike,
    data: ArrayLike,
    params: WrappedModelParams,
    H: BandwidthMatrix | float,
    box: LatticeBox,
) -> Any:
    log_f = log_torus_kde(y, data, H, box)
    log_m = log_smoothed_wn_model(y, params, H, box)
    return pearson_from_logs(log_f, log_m)


def in_cell(x: FloatArray, params: WrappedModelParams) -> FloatArray:
    offset = x - params.mu
    return np.all((offset > -math.pi) & (offset <= math.pi), axis=-1)


def log_unwrapped_smoothed_model(
    x: ArrayLike,
    params: WrappedModelParams,
    H: BandwidthMatrix | float,
    *,
    exact: bool = False,
    box: LatticeBox | None = None,
) -> Any:
    """Smoothed unwrapped model on the hyperplane.

    The default is the Gaussian N(μ, Σ+H); ``exact`` uses the wrapped density
    with Σ+H restricted to the cell T(μ).
    """
    points, single = as_points(x, params.p)
    smoothed = smoothed_params(params, H)
    if exact:
        lattice_box = resolve_box(smoothed) if box is None else box
        values = np.asarray(log_wrapped_density(points, smoothed, NORMAL, lattice_box))
        values = np.where(in_cell(points, params), values, -np.inf)
    else:
        d2 = mahalanobis_from_diff(points - smoothed.mu, smoothed.chol)
        values = NORMAL.log_c(params.p) - 0.5 * smoothed.log_det - 0.5 * d2
    return float(values[0]) if single else values


def residual_unwrapped(
    x: ArrayLike,
    unwrapped_data: ArrayLike,
    params: WrappedModelParams,
    H: BandwidthMatrix | float,
    *,
    exact: bool = False,
    box: LatticeBox | None = None,
) -> Any:
    log_f = log_linear_kde(x, unwrapped_data, H)
    log_m = log_unwrapped_smoothed_model(x, params, H, exact=exact, box=box)
    return pearson_from_logs(log_f, log_m)


def _chi2_reference(p: int) -> Callable[[FloatArray], FloatArray]:
    def log_reference(t: FloatArray) -> FloatArray:
        return chi2_logpdf(t, p)

    return log_reference


def residual_distance(
    d2: ArrayLike,
    distance_sample: ArrayLike,
    params: WrappedModelParams,
    p: int,
    mode: DistanceReference = "chi2",
    *,
    bandwidth: float | None = None,
    smooth_reference: bool = True,
    mc_size: int = 100_000,
    seed: int = 0,
) -> Any:
    """Pearson residuals on the squared-distance scale.

    With ``smooth_reference`` the χ² reference is convolved with the same
    log-scale kernel as the estimate. The unwrapped reference is itself a
    kernel estimate from a Monte Carlo sample, smoothed with the same bandwidth.
    """
    if mode not in ("chi2", "chi2_unwrapped"):
        raise DomainError(f"Unsupported distance reference '{mode}'")
    b = normal_reference_bandwidth(distance_sample) if bandwidth is None else bandwidth
    log_f = np.asarray(log_distance_kde(np.atleast_1d(d2), distance_sample, b))
    query = np.atleast_1d(np.asarray(d2, dtype=float))
    if mode == "chi2_unwrapped":
        reference = unwrapped_distance_sample(params, mc_size, seed)
        log_m = np.asarray(log_distance_kde(query, reference, b))
    elif smooth_reference:
        log_m = log_smoothed_on_log_scale(query, _chi2_reference(p), b)
    else:
        log_m = chi2_logpdf(query, p)
    delta = np.asarray(pearson_from_logs(log_f, log_m))
    return float(delta[0]) if np.ndim(d2) == 0 else delta
