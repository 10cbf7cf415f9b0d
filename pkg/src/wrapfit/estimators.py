from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import logsumexp

from wrapfit.errors import (
    ConvergenceError,
    DegenerateSampleError,
    DomainError,
    InitializationError,
    NotPositiveDefiniteError,
    NumericalUnderflowError,
    SingularUpdateError,
)
from wrapfit.kde import DistanceReference, log_smoothed_wn_model, log_torus_kde
from wrapfit.raf import (
    RafKind,
    pearson_from_logs,
    residual_distance,
    residual_unwrapped,
    weight,
)
from wrapfit.torus import (
    NORMAL,
    TWO_PI,
    EllipticalGenerator,
    FloatArray,
    IntArray,
    LatticeBox,
    WrappedModelParams,
    angular_separation,
    as_points,
    circular_correlation,
    circular_mean,
    lattice_diffs,
    lattice_enumerate,
    mahalanobis_from_diff,
    mean_resultant_length,
    resolve_box,
    ridge_repair,
    wrap,
)

logger = logging.getLogger(__name__)

_CHUNK_ELEMENTS = 4_000_000


class WeightScheme(StrEnum):
    TORUS = "torus"
    UNWRAP = "unwrap"
    DIST = "dist"


class EstimatorKind(StrEnum):
    EM = "em"
    CEM = "cem"
    WEM = "wem"
    WCEM_TORUS = "wcem-torus"
    WCEM_UNWRAP = "wcem-unwrap"
    WCEM_DIST = "wcem-dist"

    @property
    def weighted(self) -> bool:
        return self not in (EstimatorKind.EM, EstimatorKind.CEM)

    @property
    def classification(self) -> bool:
        return self not in (EstimatorKind.EM, EstimatorKind.WEM)

    @property
    def scheme(self) -> WeightScheme | None:
        return _SCHEMES.get(self)

    @classmethod
    def for_scheme(cls, scheme: WeightScheme | str) -> EstimatorKind:
        resolved = WeightScheme(scheme)
        for kind, kind_scheme in _SCHEMES.items():
            if kind.classification and kind_scheme == resolved:
                return kind
        raise DomainError(f"no classification estimator for scheme '{scheme}'")


_SCHEMES: dict[EstimatorKind, WeightScheme] = {
    EstimatorKind.WEM: WeightScheme.TORUS,
    EstimatorKind.WCEM_TORUS: WeightScheme.TORUS,
    EstimatorKind.WCEM_UNWRAP: WeightScheme.UNWRAP,
    EstimatorKind.WCEM_DIST: WeightScheme.DIST,
}

ROBUST_KINDS = (
    EstimatorKind.WEM,
    EstimatorKind.WCEM_TORUS,
    EstimatorKind.WCEM_UNWRAP,
    EstimatorKind.WCEM_DIST,
)


@dataclass(slots=True)
class FitConfig:
    raf: RafKind = field(default_factory=RafKind.gkl)
    h: float = 0.2
    J: int = 2
    tol: float = 1e-6
    max_iter: int = 500
    n_subsamples: int = 20
    subsample_size: int | None = None
    ridge: float = 1e-8
    root_threshold: float = -0.5
    distance_bandwidth: float | None = None
    distance_reference: DistanceReference = "chi2"
    smooth_reference: bool = True
    unwrapped_exact: bool = False
    mc_size: int = 100_000
    suspicious_mean_weight: float = 0.1
    generator: EllipticalGenerator = NORMAL

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise DomainError(f"tol must be > 0 (received {self.tol})")
        if self.max_iter < 1:
            raise DomainError(f"max_iter must be >= 1 (received {self.max_iter})")
        if self.n_subsamples < 1:
            raise DomainError(f"n_subsamples must be >= 1 (received {self.n_subsamples})")
        if not self.h > 0:
            raise DomainError(f"bandwidth h must be > 0 (received {self.h})")
        if self.J < 0:
            raise DomainError(f"J must be >= 0 (received {self.J})")
        if self.ridge < 0:
            raise DomainError(f"ridge must be >= 0 (received {self.ridge})")
        if self.distance_bandwidth is not None and not self.distance_bandwidth > 0:
            raise DomainError("distance_bandwidth must be > 0 when given")
        if self.distance_reference not in ("chi2", "chi2_unwrapped"):
            raise DomainError(f"Unsupported distance reference '{self.distance_reference}'")
        if not -1.0 <= self.root_threshold <= 0.0:
            raise DomainError("root_threshold must be in [-1, 0]")

    def resolved_subsample_size(self, p: int) -> int:
        size = p + p * (p + 1) // 2 + 5 if self.subsample_size is None else self.subsample_size
        if size < p + 1:
            raise DomainError(f"subsample_size must be >= p + 1 = {p + 1} (received {size})")
        return size

    def with_bandwidth(self, h: float, kind: EstimatorKind | None = None) -> FitConfig:
        """Copy with the bandwidth that drives ``kind``'s residuals replaced."""
        if kind is EstimatorKind.WCEM_DIST:
            return replace(self, distance_bandwidth=h)
        return replace(self, h=h)

    def bandwidth_for(self, kind: EstimatorKind) -> float | None:
        if kind is EstimatorKind.WCEM_DIST:
            return self.distance_bandwidth
        return self.h

    def to_dict(self) -> dict[str, Any]:
        return {
            "raf": self.raf.to_dict(),
            "h": self.h,
            "J": self.J,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "n_subsamples": self.n_subsamples,
            "subsample_size": self.subsample_size,
            "ridge": self.ridge,
            "root_threshold": self.root_threshold,
            "distance_bandwidth": self.distance_bandwidth,
            "distance_reference": self.distance_reference,
            "smooth_reference": self.smooth_reference,
            "unwrapped_exact": self.unwrapped_exact,
            "mc_size": self.mc_size,
            "generator": self.generator.name,
        }


@dataclass(slots=True)
class IterationRecord:
    iteration: int
    mu_change: float
    sigma_change: float
    mean_weight: float
    log_likelihood: float
    ridge: float = 0.0
    warning: str | None = None


@dataclass(slots=True)
class FitResult:
    kind: EstimatorKind
    params: WrappedModelParams
    weights: FloatArray
    unwrapped: FloatArray
    j_hat: IntArray
    iterations: int
    converged: bool
    trace: list[IterationRecord]
    log_likelihood: float
    residuals: FloatArray | None = None

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    @property
    def p(self) -> int:
        return self.params.p

    @property
    def mean_weight(self) -> float:
        return float(np.mean(self.weights))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": str(self.kind),
            "params": self.params.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "mean_weight": self.mean_weight,
            "log_likelihood": self.log_likelihood,
            "trace": [asdict(record) for record in self.trace],
        }


def prepare_data(data: ArrayLike) -> FloatArray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DomainError(f"data must be an (n, p) array with n >= 1, got shape {arr.shape}")
    return wrap(arr)


def _tie_ordered_lattice(box: LatticeBox) -> IntArray:
    lattice = lattice_enumerate(box)
    norms = np.sum(lattice * lattice, axis=1)
    # lexsort keys are read last-to-first: norm first, then coordinates in order
    keys = tuple(lattice[:, d] for d in range(lattice.shape[1] - 1, -1, -1)) + (norms,)
    return lattice[np.lexsort(keys)]


@dataclass(slots=True)
class _FitContext:
    kind: EstimatorKind
    config: FitConfig
    y: FloatArray
    box: LatticeBox
    lattice: IntArray
    log_f_torus: FloatArray | None = None

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return int(self.y.shape[1])

    @classmethod
    def build(cls, data: ArrayLike, kind: EstimatorKind, config: FitConfig) -> _FitContext:
        y = prepare_data(data)
        box = LatticeBox(config.J, y.shape[1])
        context = cls(kind, config, y, box, _tie_ordered_lattice(box))
        if kind.scheme is WeightScheme.TORUS:
            # the kernel estimate does not depend on θ
            context.log_f_torus = np.asarray(log_torus_kde(y, y, config.h, box))
        logger.debug(
            "fit context kind=%s n=%d p=%d lattice=%d", kind, context.n, context.p, box.size
        )
        return context


@dataclass(slots=True)
class _LatticePass:
    log_likelihood: float
    j_index: IntArray
    s0: float = 0.0
    s1: FloatArray | None = None
    s2: FloatArray | None = None


def _lattice_pass(
    context: _FitContext,
    params: WrappedModelParams,
    weights: FloatArray | None = None,
) -> _LatticePass:
    """E-step over the lattice box in row chunks.

    With ``weights`` the weighted score sums Σ w_i Σ_j v_ij (x_ij − μ)^k for
    k = 0, 1, 2 are accumulated as well.
    """
    gen = context.config.generator
    shifts = TWO_PI * context.lattice
    n, p = context.n, context.p
    base = context.y - params.mu
    log_norm = gen.log_c(p) - 0.5 * params.log_det
    step = max(1, _CHUNK_ELEMENTS // (shifts.shape[0] * p))

    loglik = 0.0
    j_index = np.empty(n, dtype=np.int64)
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    for start in range(0, n, step):
        rows = slice(start, min(start + step, n))
        diffs = base[rows, None, :] + shifts[None, :, :]
        d2 = mahalanobis_from_diff(diffs, params.chol)
        log_h = gen.log_h(d2)
        row_norm = logsumexp(log_h, axis=1)
        if not np.all(np.isfinite(row_norm)):
            raise NumericalUnderflowError("lattice weights underflow for some observations")
        loglik += float(np.sum(row_norm + log_norm))
        j_index[rows] = np.argmax(log_h, axis=1)
        if weights is None:
            continue
        omega = np.exp(log_h - row_norm[:, None])
        v = weights[rows, None] * gen.dlog_h(d2) * omega
        s0 += float(np.sum(v))
        s1 += np.einsum("nk,nkp->p", v, diffs)
        s2 += np.einsum("nk,nkp,nkq->pq", v, diffs, diffs)

    if weights is None:
        return _LatticePass(loglik, j_index)
    return _LatticePass(loglik, j_index, s0, s1, s2)


def _moment_update(
    params: WrappedModelParams,
    s0: float,
    s1: FloatArray,
    s2: FloatArray,
    weight_sum: float,
    ridge: float,
) -> tuple[WrappedModelParams, float]:
    if s0 == 0.0:
        raise SingularUpdateError("score weights sum to zero")
    shift = s1 / s0
    scatter = (-2.0 / weight_sum) * (s2 - np.outer(s1, s1) / s0)
    scatter = 0.5 * (scatter + scatter.T)
    repaired, applied = ridge_repair(scatter, ridge)
    return WrappedModelParams(params.mu + shift, repaired), applied


def _check_weight_sum(weights: FloatArray, p: int) -> float:
    total = float(np.sum(weights))
    if total < p + 1:
        raise SingularUpdateError(
            f"sum of weights {total:.4g} is below p + 1 = {p + 1}; update is singular"
        )
    return total


def _unwrapped(context: _FitContext, j_index: IntArray) -> tuple[FloatArray, IntArray]:
    j_hat = np.asarray(context.lattice[j_index], dtype=np.int64)
    return context.y + TWO_PI * j_hat, j_hat


def _residuals(
    context: _FitContext,
    params: WrappedModelParams,
    x_hat: FloatArray,
) -> FloatArray:
    config = context.config
    scheme = context.kind.scheme
    if scheme is WeightScheme.TORUS:
        assert context.log_f_torus is not None
        log_m = log_smoothed_wn_model(context.y, params, config.h, context.box)
        return np.asarray(pearson_from_logs(context.log_f_torus, log_m))
    if scheme is WeightScheme.UNWRAP:
        return np.asarray(
            residual_unwrapped(
                x_hat,
                x_hat,
                params,
                config.h,
                exact=config.unwrapped_exact,
                box=context.box,
            )
        )
    d2 = mahalanobis_from_diff(x_hat - params.mu, params.chol)
    return np.asarray(
        residual_distance(
            d2,
            d2,
            params,
            context.p,
            config.distance_reference,
            bandwidth=config.distance_bandwidth,
            smooth_reference=config.smooth_reference,
            mc_size=config.mc_size,
        )
    )


def _classification_sums(
    params: WrappedModelParams,
    x_hat: FloatArray,
    weights: FloatArray,
    gen: EllipticalGenerator,
) -> tuple[float, FloatArray, FloatArray]:
    diffs = x_hat - params.mu
    d2 = mahalanobis_from_diff(diffs, params.chol)
    v = weights * gen.dlog_h(d2)
    return float(np.sum(v)), v @ diffs, np.einsum("n,np,nq->pq", v, diffs, diffs)


@dataclass(slots=True)
class _Step:
    params: WrappedModelParams
    log_likelihood: float
    weights: FloatArray
    ridge: float


def _step(context: _FitContext, params: WrappedModelParams) -> _Step:
    config = context.config
    kind = context.kind
    ones = np.ones(context.n)

    if not kind.classification:
        if kind.weighted:
            residuals = _residuals(context, params, context.y)
            weights = np.asarray(weight(residuals, config.raf), dtype=float)
        else:
            weights = ones
        weight_sum = _check_weight_sum(weights, context.p)
        lattice_pass = _lattice_pass(context, params, weights)
        assert lattice_pass.s1 is not None and lattice_pass.s2 is not None
        updated, ridge = _moment_update(
            params,
            lattice_pass.s0,
            lattice_pass.s1,
            lattice_pass.s2,
            weight_sum,
            config.ridge,
        )
        return _Step(updated, lattice_pass.log_likelihood, weights, ridge)

    lattice_pass = _lattice_pass(context, params)
    x_hat, _ = _unwrapped(context, lattice_pass.j_index)
    if kind.weighted:
        residuals = _residuals(context, params, x_hat)
        weights = np.asarray(weight(residuals, config.raf), dtype=float)
    else:
        weights = ones
    weight_sum = _check_weight_sum(weights, context.p)
    s0, s1, s2 = _classification_sums(params, x_hat, weights, config.generator)
    updated, ridge = _moment_update(params, s0, s1, s2, weight_sum, config.ridge)
    return _Step(updated, lattice_pass.log_likelihood, weights, ridge)


def check_convergence(
    prev: WrappedModelParams, next: WrappedModelParams, tol: float
) -> bool:
    if prev.p != next.p:
        raise DomainError("parameters of different dimension")
    mu_change = float(np.max(angular_separation(next.mu, prev.mu)))
    sigma_change = float(np.linalg.norm(next.sigma - prev.sigma, ord="fro"))
    return mu_change < tol and sigma_change < tol


def _finalize(
    context: _FitContext,
    params: WrappedModelParams,
    iterations: int,
    converged: bool,
    trace: list[IterationRecord],
) -> FitResult:
    lattice_pass = _lattice_pass(context, params)
    x_hat, j_hat = _unwrapped(context, lattice_pass.j_index)
    residuals: FloatArray | None = None
    if context.kind.weighted:
        residuals = _residuals(context, params, x_hat)
        weights = np.asarray(weight(residuals, context.config.raf), dtype=float)
    else:
        weights = np.ones(context.n)
    return FitResult(
        kind=context.kind,
        params=params,
        weights=weights,
        unwrapped=x_hat,
        j_hat=j_hat,
        iterations=iterations,
        converged=converged,
        trace=trace,
        log_likelihood=lattice_pass.log_likelihood,
        residuals=residuals,
    )


def _iterate(context: _FitContext, start: WrappedModelParams) -> FitResult:
    config = context.config
    params = start
    trace: list[IterationRecord] = []
    best_params = start
    best_change = math.inf
    warned = False

    for iteration in range(1, config.max_iter + 1):
        step = _step(context, params)
        mu_change = float(np.max(angular_separation(step.params.mu, params.mu)))
        sigma_change = float(np.linalg.norm(step.params.sigma - params.sigma, ord="fro"))
        mean_weight = float(np.mean(step.weights))
        warning: str | None = None
        if context.kind.weighted and mean_weight < config.suspicious_mean_weight:
            warning = f"suspicious fit: mean weight {mean_weight:.3g}"
            if not warned:
                logger.warning("%s: %s", context.kind, warning)
                warned = True
        trace.append(
            IterationRecord(
                iteration=iteration,
                mu_change=mu_change,
                sigma_change=sigma_change,
                mean_weight=mean_weight,
                log_likelihood=step.log_likelihood,
                ridge=step.ridge,
                warning=warning,
            )
        )
        logger.debug(
            "%s iteration %d: dmu=%.3e dsigma=%.3e wbar=%.4f loglik=%.6f",
            context.kind,
            iteration,
            mu_change,
            sigma_change,
            mean_weight,
            step.log_likelihood,
        )
        change = max(mu_change, sigma_change)
        if change < best_change:
            best_change = change
            best_params = step.params
        if mu_change < config.tol and sigma_change < config.tol:
            return _finalize(context, step.params, iteration, True, trace)
        params = step.params

    logger.warning(
        "%s did not converge in %d iterations (smallest step %.3e)",
        context.kind,
        config.max_iter,
        best_change,
    )
    return _finalize(context, best_params, config.max_iter, False, trace)


def moment_estimate(sample: ArrayLike, ridge: float = 1e-8) -> WrappedModelParams:
    """Starting values from circular moments of a sample."""
    values = prepare_data(sample)
    p = values.shape[1]
    mu = np.atleast_1d(circular_mean(values, axis=0))
    rho = np.atleast_1d(mean_resultant_length(values, axis=0))
    variances = np.maximum(-2.0 * np.log(np.clip(rho, np.finfo(float).tiny, 1.0)), 0.0)
    scales = np.sqrt(variances)
    sigma = np.diag(variances)
    for r in range(p):
        for s in range(r + 1, p):
            try:
                rho_c = circular_correlation(values[:, r], values[:, s])
            except DegenerateSampleError:
                rho_c = 0.0
            sigma[r, s] = sigma[s, r] = rho_c * scales[r] * scales[s]
    repaired, _ = ridge_repair(sigma, ridge)
    return WrappedModelParams(mu, repaired)


def initialize(
    data: ArrayLike, config: FitConfig, rng: np.random.Generator
) -> list[WrappedModelParams]:
    y = prepare_data(data)
    n, p = y.shape
    size = config.resolved_subsample_size(p)
    if n < size:
        raise DomainError(f"initialization needs at least {size} observations (received {n})")

    candidates: list[WrappedModelParams] = []
    for index in range(config.n_subsamples):
        subset = rng.choice(n, size=size, replace=False)
        try:
            candidates.append(moment_estimate(y[subset], config.ridge))
        except (DegenerateSampleError, NotPositiveDefiniteError) as exc:
            logger.warning("initial subsample %d discarded: %s", index, exc)
    if not candidates:
        raise InitializationError(
            f"all {config.n_subsamples} initial subsamples were degenerate"
        )
    logger.debug("initialization produced %d candidates", len(candidates))
    return candidates


def _small_residual_fraction(result: FitResult, threshold: float) -> float:
    assert result.residuals is not None
    return float(np.mean(result.residuals < threshold))


def select_root(
    candidates: list[FitResult],
    config: FitConfig | None = None,
    *,
    require_converged: bool = True,
) -> FitResult:
    """Pick one root among candidate fits.

    Weighted fits minimize the fraction of Pearson residuals below the
    threshold, ties going to the higher mean weight. Unweighted fits maximize
    the log-likelihood. Earlier candidates win exact ties.
    """
    threshold = (config or FitConfig()).root_threshold
    pool = [c for c in candidates if c.converged] if require_converged else list(candidates)
    if not pool:
        summaries = "; ".join(
            f"#{index}: {c.iterations} iterations, last step "
            f"{max(c.trace[-1].mu_change, c.trace[-1].sigma_change) if c.trace else math.nan:.3e}"
            for index, c in enumerate(candidates)
        )
        raise ConvergenceError(f"no candidate fit converged ({summaries})")

    best = pool[0]
    for candidate in pool[1:]:
        if _ranks_before(candidate, best, threshold):
            best = candidate
    return best


def _ranks_before(candidate: FitResult, incumbent: FitResult, threshold: float) -> bool:
    if candidate.residuals is None or incumbent.residuals is None:
        return candidate.log_likelihood > incumbent.log_likelihood
    fraction = _small_residual_fraction(candidate, threshold)
    incumbent_fraction = _small_residual_fraction(incumbent, threshold)
    if fraction != incumbent_fraction:
        return fraction < incumbent_fraction
    return candidate.mean_weight > incumbent.mean_weight


def fit(
    data: ArrayLike,
    kind: EstimatorKind | str,
    config: FitConfig | None = None,
    *,
    initial: WrappedModelParams | None = None,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> FitResult:
    estimator = EstimatorKind(kind)
    fit_config = FitConfig() if config is None else config
    context = _FitContext.build(data, estimator, fit_config)
    if initial is not None:
        if initial.p != context.p:
            raise DomainError(f"initial parameters have p={initial.p}, data has p={context.p}")
        starts = [initial]
    else:
        generator = np.random.default_rng(seed) if rng is None else rng
        starts = initialize(context.y, fit_config, generator)

    results: list[FitResult] = []
    failures: list[str] = []
    for index, start in enumerate(starts):
        try:
            results.append(_iterate(context, start))
        except (NotPositiveDefiniteError, SingularUpdateError, NumericalUnderflowError) as exc:
            logger.warning("%s candidate %d failed: %s", estimator, index, exc)
            failures.append(f"#{index}: {exc}")
    if not results:
        raise ConvergenceError(
            f"all {len(starts)} {estimator} candidate fits failed: " + "; ".join(failures)
        )

    if any(result.converged for result in results):
        chosen = select_root(results, fit_config)
    else:
        logger.warning("no %s candidate converged; returning the best iterate", estimator)
        chosen = select_root(results, fit_config, require_converged=False)
    logger.info(
        "%s fit: iterations=%d converged=%s mean_weight=%.4f",
        estimator,
        chosen.iterations,
        chosen.converged,
        chosen.mean_weight,
    )
    return chosen


def em_fit(
    data: ArrayLike,
    config: FitConfig | None = None,
    *,
    initial: WrappedModelParams | None = None,
    seed: int | None = None,
) -> FitResult:
    return fit(data, EstimatorKind.EM, config, initial=initial, seed=seed)


def cem_fit(
    data: ArrayLike,
    config: FitConfig | None = None,
    *,
    initial: WrappedModelParams | None = None,
    seed: int | None = None,
) -> FitResult:
    return fit(data, EstimatorKind.CEM, config, initial=initial, seed=seed)


def wem_fit(
    data: ArrayLike,
    config: FitConfig | None = None,
    *,
    initial: WrappedModelParams | None = None,
    seed: int | None = None,
) -> FitResult:
    return fit(data, EstimatorKind.WEM, config, initial=initial, seed=seed)


def wcem_fit(
    data: ArrayLike,
    config: FitConfig | None = None,
    scheme: WeightScheme | str = WeightScheme.TORUS,
    *,
    initial: WrappedModelParams | None = None,
    seed: int | None = None,
) -> FitResult:
    return fit(data, EstimatorKind.for_scheme(scheme), config, initial=initial, seed=seed)


def em_update(
    data: ArrayLike,
    params: WrappedModelParams,
    config: FitConfig | None = None,
    weights: ArrayLike | None = None,
) -> WrappedModelParams:
    """One application of the (weighted) EM fixed-point map."""
    fit_config = FitConfig() if config is None else config
    context = _FitContext.build(data, EstimatorKind.EM, fit_config)
    w = np.ones(context.n) if weights is None else np.asarray(weights, dtype=float)
    weight_sum = _check_weight_sum(w, context.p)
    lattice_pass = _lattice_pass(context, params, w)
    assert lattice_pass.s1 is not None and lattice_pass.s2 is not None
    updated, _ = _moment_update(
        params, lattice_pass.s0, lattice_pass.s1, lattice_pass.s2, weight_sum, fit_config.ridge
    )
    return updated


def posterior_lattice_weights(
    y: ArrayLike,
    params: WrappedModelParams,
    gen: EllipticalGenerator = NORMAL,
    box: LatticeBox | None = None,
) -> Any:
    """Conditional probabilities of the wrapping coefficients.

    Columns follow ``lattice_enumerate(box)``, by default the adequate box for
    ``params``; a single point gives a vector.
    """
    points, single = as_points(y, params.p)
    lattice_box = resolve_box(params) if box is None else box
    d2 = mahalanobis_from_diff(lattice_diffs(points, params, lattice_box), params.chol)
    log_h = gen.log_h(d2)
    row_norm = logsumexp(log_h, axis=1)
    if not np.all(np.isfinite(row_norm)):
        raise NumericalUnderflowError("lattice weights underflow for some observations")
    omega = np.exp(log_h - row_norm[:, None])
    return omega[0] if single else omega


def classify_lattice(
    y: ArrayLike,
    params: WrappedModelParams,
    gen: EllipticalGenerator = NORMAL,
    box: LatticeBox | None = None,
) -> Any:
    """Most probable wrapping coefficients, as used by the C-step.

    Ties go to the lattice vector of smallest norm, then lexicographic order.
    """
    points, single = as_points(y, params.p)
    lattice = _tie_ordered_lattice(resolve_box(params) if box is None else box)
    diffs = (wrap(points) - params.mu)[:, None, :] + TWO_PI * lattice[None, :, :]
    d2 = mahalanobis_from_diff(diffs, params.chol)
    j_hat = lattice[np.argmax(gen.log_h(d2), axis=1)]
    return j_hat[0] if single else j_hat


def lattice_score_weights(
    y: ArrayLike,
    params: WrappedModelParams,
    gen: EllipticalGenerator = NORMAL,
    box: LatticeBox | None = None,
) -> Any:
    """v_ij = h'(d²_ij) / Σ_k h(d²_ik)."""
    points, single = as_points(y, params.p)
    lattice_box = resolve_box(params) if box is None else box
    d2 = mahalanobis_from_diff(lattice_diffs(points, params, lattice_box), params.chol)
    omega = np.asarray(posterior_lattice_weights(points, params, gen, lattice_box))
    v = gen.dlog_h(d2) * omega
    return v[0] if single else v
