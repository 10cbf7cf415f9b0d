"""Population-level tools for the univariate wrapped normal.

Covers the variance of the unwrapped model and numerical influence functions
of weighted-likelihood location functionals under a two-component wrapped
normal mixture. Scale is held at the clean component's σ₀ throughout.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy import integrate, optimize
from scipy.special import logsumexp
from scipy.stats import norm

from wrapfit.errors import ConvergenceError, DomainError
from wrapfit.estimators import EstimatorKind
from wrapfit.kde import log_smoothed_on_log_scale
from wrapfit.raf import RafKind, pearson_from_logs, raf_deriv, weight
from wrapfit.torus import TWO_PI, FloatArray

logger = logging.getLogger(__name__)

INFLUENCE_KINDS = (
    EstimatorKind.WEM,
    EstimatorKind.WCEM_UNWRAP,
    EstimatorKind.WCEM_DIST,
)

_LATTICE = np.arange(-4, 5, dtype=float)
_PERIODIC_POINTS = 2048
_LEGENDRE_NODES = 400
_ROOT_SCAN = np.linspace(-math.pi / 2, math.pi / 2, 181)
_FD_STEP = 1e-5


def _log_wn(x: ArrayLike, mean: float, var: float) -> FloatArray:
    """Univariate wrapped normal log density, summed over ±4 turns."""
    values = np.asarray(x, dtype=float)
    shifted = values[..., None] - mean + TWO_PI * _LATTICE
    log_terms = -0.5 * shifted * shifted / var
    return logsumexp(log_terms, axis=-1) - 0.5 * math.log(TWO_PI * var)


def _wn_score(x: ArrayLike, mu: float, var: float) -> tuple[FloatArray, FloatArray]:
    """First and second μ-derivatives of the wrapped normal log density."""
    values = np.asarray(x, dtype=float)
    shifted = values[..., None] - mu + TWO_PI * _LATTICE
    log_terms = -0.5 * shifted * shifted / var
    omega = np.exp(log_terms - logsumexp(log_terms, axis=-1, keepdims=True))
    s = shifted / var
    score = np.sum(omega * s, axis=-1)
    second = np.sum(omega * (s * s - 1.0 / var), axis=-1) - score * score
    return score, second


def sigma_unwrapped(sigma0: float) -> float:
    """Standard deviation of the unwrapped model for a univariate WN(0, σ₀²).

    Solves the normal-score population equation on (−π, π) by adaptive quadrature.
    """
    if not math.isfinite(sigma0) or sigma0 <= 0:
        raise DomainError(f"sigma0 must be > 0 (received {sigma0})")
    var = sigma0 * sigma0

    def integrand(x: float) -> float:
        return x * x * math.exp(float(_log_wn(x, 0.0, var)))

    result = integrate.quad(
        integrand, -math.pi, math.pi, epsabs=1e-12, epsrel=1e-10, limit=200, full_output=1
    )
    if len(result) > 3:
        raise ConvergenceError(f"quadrature for sigma0={sigma0} did not converge: {result[3]}")
    return math.sqrt(result[0])


def sigma_unwrapped_curve(sigmas: ArrayLike) -> list[tuple[float, float]]:
    return [(float(s), sigma_unwrapped(float(s))) for s in np.asarray(sigmas, dtype=float).ravel()]


@dataclass(frozen=True, slots=True)
class WrappedMixture:
    """(1 − ε)·WN(0, σ₀²) + ε·WN(μ_c, σ_c²)."""

    eps: float = 0.0
    sigma0: float = math.pi / 8
    contaminant_mu: float = math.pi / 2
    contaminant_sigma: float = math.pi / 16

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps < 0.5:
            raise DomainError(f"eps must be in [0, 0.5) (received {self.eps})")
        if self.sigma0 <= 0 or self.contaminant_sigma <= 0:
            raise DomainError("mixture scales must be > 0")

    def components(self, extra_var: float = 0.0) -> list[tuple[float, float, float]]:
        parts = [(1.0 - self.eps, 0.0, self.sigma0**2 + extra_var)]
        if self.eps > 0:
            parts.append((self.eps, self.contaminant_mu, self.contaminant_sigma**2 + extra_var))
        return parts

    def log_density(self, x: ArrayLike, extra_var: float = 0.0) -> FloatArray:
        """Log density, optionally convolved with a WN(0, extra_var) kernel."""
        logs = [math.log(w) + _log_wn(x, mean, var) for w, mean, var in self.components(extra_var)]
        return logsumexp(np.stack(logs), axis=0)


def _truncated_convolution(
    x: FloatArray, center: float, s: float, h: float, lo: float, hi: float
) -> FloatArray:
    """∫_lo^hi φ_h(x − t) φ_s(t − center) dt in closed form."""
    total = h * h + s * s
    scale = math.sqrt(total)
    mean = (x * s * s + center * h * h) / total
    tau = h * s / scale
    mass = norm.cdf((hi - mean) / tau) - norm.cdf((lo - mean) / tau)
    return norm.pdf(x, loc=center, scale=scale) * mass


@dataclass(slots=True)
class _Pieces:
    x: FloatArray
    dx: FloatArray
    f: FloatArray
    delta: FloatArray
    u: FloatArray
    u_prime: FloatArray
    u_hat: FloatArray


class InfluenceFunction:
    """IF(z) = N(z, F) / D(F) for a location functional with scale fixed at σ₀."""

    def __init__(
        self,
        kind: EstimatorKind | str,
        mixture: WrappedMixture | None = None,
        raf: RafKind | None = None,
        h: float = 0.1,
    ) -> None:
        self.kind = EstimatorKind(kind)
        if self.kind not in INFLUENCE_KINDS:
            allowed = ", ".join(str(k) for k in INFLUENCE_KINDS)
            raise DomainError(f"Unsupported functional '{self.kind}'. Allowed: {allowed}")
        if not h > 0:
            raise DomainError(f"bandwidth h must be > 0 (received {h})")
        self.mixture = WrappedMixture() if mixture is None else mixture
        self.raf = RafKind.gkl() if raf is None else raf
        self.h = h
        self.var = self.mixture.sigma0**2
        self.location = self._solve_location()
        pieces = self._pieces(self.location)
        slope = np.asarray(raf_deriv(self.raf, pieces.delta)) - self._weights(pieces.delta)
        self._pieces_at_root = pieces
        self._slope = slope
        self.denominator = float(
            np.sum(slope * pieces.u_hat * pieces.u * pieces.f * pieces.dx)
            - np.sum(self._weights(pieces.delta) * pieces.u_prime * pieces.f * pieces.dx)
        )
        if not math.isfinite(self.denominator) or self.denominator == 0:
            raise ConvergenceError(f"degenerate influence denominator {self.denominator}")
        logger.debug(
            "%s functional: T(F)=%.6f D(F)=%.6f", self.kind, self.location, self.denominator
        )

    def _weights(self, delta: FloatArray) -> FloatArray:
        return np.asarray(weight(delta, self.raf), dtype=float)

    # population pieces per scheme

    def _pieces(self, mu: float) -> _Pieces:
        if self.kind is EstimatorKind.WEM:
            return self._torus_pieces(mu)
        if self.kind is EstimatorKind.WCEM_UNWRAP:
            return self._unwrap_pieces(mu)
        return self._distance_pieces(mu)

    def _torus_pieces(self, mu: float) -> _Pieces:
        x = -math.pi + TWO_PI * np.arange(_PERIODIC_POINTS) / _PERIODIC_POINTS
        dx = np.full(x.shape, TWO_PI / _PERIODIC_POINTS)
        h2 = self.h * self.h
        log_f_hat = self.mixture.log_density(x, h2)
        log_m_hat = _log_wn(x, mu, self.var + h2)
        u, u_prime = _wn_score(x, mu, self.var)
        u_hat, _ = _wn_score(x, mu, self.var + h2)
        return _Pieces(
            x=x,
            dx=dx,
            f=np.exp(self.mixture.log_density(x)),
            delta=np.asarray(pearson_from_logs(log_f_hat, log_m_hat)),
            u=u,
            u_prime=u_prime,
            u_hat=u_hat,
        )

    def _cell_nodes(self, mu: float) -> tuple[FloatArray, FloatArray]:
        nodes, weights = np.polynomial.legendre.leggauss(_LEGENDRE_NODES)
        return mu + math.pi * nodes, math.pi * weights

    def _smoothed_cell_log(self, x: FloatArray, mu: float, *, model: bool) -> FloatArray:
        lo, hi = mu - math.pi, mu + math.pi
        parts = [(1.0, mu, self.mixture.sigma0)] if model else [
            (w, mean, math.sqrt(var)) for w, mean, var in self.mixture.components()
        ]
        total = np.zeros_like(x)
        for w, mean, s in parts:
            for j in _LATTICE:
                total += w * _truncated_convolution(x, mean + TWO_PI * j, s, self.h, lo, hi)
        with np.errstate(divide="ignore"):
            return np.log(total)

    def _unwrap_pieces(self, mu: float) -> _Pieces:
        x, dx = self._cell_nodes(mu)
        log_f_hat = self._smoothed_cell_log(x, mu, model=False)
        log_m_hat = self._smoothed_cell_log(x, mu, model=True)
        forward = self._smoothed_cell_log(x, mu + _FD_STEP, model=True)
        backward = self._smoothed_cell_log(x, mu - _FD_STEP, model=True)
        return _Pieces(
            x=x,
            dx=dx,
            f=np.exp(self.mixture.log_density(x)),
            delta=np.asarray(pearson_from_logs(log_f_hat, log_m_hat)),
            u=(x - mu) / self.var,
            u_prime=np.full(x.shape, -1.0 / self.var),
            u_hat=(forward - backward) / (2.0 * _FD_STEP),
        )

    def _distance_log_density(
        self, mu: float, *, model: bool
    ) -> Callable[[FloatArray], FloatArray]:
        sigma = self.mixture.sigma0
        support = (math.pi / sigma) ** 2

        def log_density(t: FloatArray) -> FloatArray:
            t = np.asarray(t, dtype=float)
            out = np.full(t.shape, -np.inf)
            inside = (t > 0) & (t < support)
            r = sigma * np.sqrt(t[inside])
            if model:
                pair = np.logaddexp(_log_wn(r, 0.0, self.var), _log_wn(-r, 0.0, self.var))
            else:
                pair = np.logaddexp(
                    self.mixture.log_density(mu + r), self.mixture.log_density(mu - r)
                )
            out[inside] = pair + math.log(sigma) - math.log(2.0) - 0.5 * np.log(t[inside])
            return out

        return log_density

    def _distance_delta(self, t: FloatArray, mu: float) -> FloatArray:
        data_density = self._distance_log_density(mu, model=False)
        model_density = self._distance_log_density(mu, model=True)
        log_f_hat = log_smoothed_on_log_scale(t, data_density, self.h)
        log_m_hat = log_smoothed_on_log_scale(t, model_density, self.h)
        return np.asarray(pearson_from_logs(log_f_hat, log_m_hat))

    def _distance_pieces(self, mu: float) -> _Pieces:
        x, dx = self._cell_nodes(mu)
        t = (x - mu) ** 2 / self.var
        log_model = self._distance_log_density(mu, model=True)
        step = _FD_STEP * t
        slope_t = (
            log_smoothed_on_log_scale(t + step, log_model, self.h)
            - log_smoothed_on_log_scale(t - step, log_model, self.h)
        ) / (2.0 * step)
        return _Pieces(
            x=x,
            dx=dx,
            f=np.exp(self.mixture.log_density(x)),
            delta=self._distance_delta(t, mu),
            u=(x - mu) / self.var,
            u_prime=np.full(x.shape, -1.0 / self.var),
            u_hat=slope_t * (-2.0 * (x - mu) / self.var),
        )

    # functional

    def estimating_equation(self, mu: float) -> float:
        pieces = self._pieces(mu)
        return float(np.sum(self._weights(pieces.delta) * pieces.u * pieces.f * pieces.dx))

    def _solve_location(self) -> float:
        values = np.array([self.estimating_equation(float(mu)) for mu in _ROOT_SCAN])
        brackets: list[tuple[float, float]] = []
        for i in range(len(_ROOT_SCAN) - 1):
            if values[i] == 0.0:
                brackets.append((_ROOT_SCAN[i], _ROOT_SCAN[i]))
            elif values[i] > 0.0 and values[i + 1] <= 0.0:
                brackets.append((_ROOT_SCAN[i], _ROOT_SCAN[i + 1]))
        if not brackets:
            raise ConvergenceError(f"no root of the {self.kind} estimating equation was bracketed")
        lo, hi = min(brackets, key=lambda pair: abs(pair[0] + pair[1]))
        if lo == hi:
            return float(lo)
        root = optimize.brentq(self.estimating_equation, lo, hi, xtol=1e-12)
        return float(root)

    def numerator(self, z: ArrayLike) -> Any:
        points = np.atleast_1d(np.asarray(z, dtype=float))
        pieces = self._pieces_at_root
        mu = self.location
        if self.kind is EstimatorKind.WEM:
            delta_z = np.asarray(
                pearson_from_logs(
                    self.mixture.log_density(points, self.h**2),
                    _log_wn(points, mu, self.var + self.h**2),
                )
            )
            u_z, _ = _wn_score(points, mu, self.var)
            diff = pieces.x[None, :] - points[:, None]
            kernel = np.exp(_log_wn(diff, 0.0, self.h**2))
            f_hat = np.exp(self.mixture.log_density(pieces.x, self.h**2))
            # the -1 term keeps the influence function centred under the mixture
            correction = (kernel / f_hat[None, :] - 1.0) @ (
                self._slope * pieces.u * pieces.f * pieces.dx
            )
            values = self._weights(delta_z) * u_z + correction
        else:
            inside = (points > mu - math.pi) & (points < mu + math.pi)
            values = np.zeros(points.shape)
            cell = points[inside]
            u_z = (cell - mu) / self.var
            if self.kind is EstimatorKind.WCEM_UNWRAP:
                delta_z = np.asarray(
                    pearson_from_logs(
                        self._smoothed_cell_log(cell, mu, model=False),
                        self._smoothed_cell_log(cell, mu, model=True),
                    )
                )
                f_hat = np.exp(self._smoothed_cell_log(pieces.x, mu, model=False))
                kernel = norm.pdf(pieces.x[None, :] - cell[:, None], scale=self.h)
                correction = (kernel / f_hat[None, :] - 1.0) @ (
                    self._slope * pieces.u * pieces.f * pieces.dx
                )
                values[inside] = self._weights(delta_z) * u_z + correction
            else:
                # weights see z only through d²(z); the smoothing term cancels by reflection
                delta_z = self._distance_delta((cell - mu) ** 2 / self.var, mu)
                values[inside] = self._weights(delta_z) * u_z
        return float(values[0]) if np.ndim(z) == 0 else values

    def __call__(self, z: ArrayLike) -> Any:
        values = np.asarray(self.numerator(z)) / self.denominator
        return float(values) if np.ndim(z) == 0 else values

    def mle_reference(self, z: ArrayLike) -> Any:
        """I(θ₀)⁻¹ u(z; θ₀) for the clean component."""
        points = np.atleast_1d(np.asarray(z, dtype=float))
        if self.kind is EstimatorKind.WEM:
            x = -math.pi + TWO_PI * np.arange(_PERIODIC_POINTS) / _PERIODIC_POINTS
            _, second = _wn_score(x, 0.0, self.var)
            information = -float(
                np.sum(second * np.exp(_log_wn(x, 0.0, self.var))) * TWO_PI / _PERIODIC_POINTS
            )
            score, _ = _wn_score(points, 0.0, self.var)
            values = score / information
        else:
            inside = (points > -math.pi) & (points < math.pi)
            values = np.where(inside, points, 0.0)
        return float(values[0]) if np.ndim(z) == 0 else values


def influence_location(
    z: ArrayLike,
    functional: EstimatorKind | str,
    mixture: WrappedMixture | None = None,
    raf: RafKind | None = None,
    h: float = 0.1,
) -> Any:
    return InfluenceFunction(functional, mixture, raf, h)(z)
