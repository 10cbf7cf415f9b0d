from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import UTC, datetime
from functools import partial
from time import perf_counter
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import ortho_group

from wrapfit.detection import DEFAULT_ALPHA, detect_by_distance, swamping_and_power
from wrapfit.errors import ConvergenceError, DegenerateSampleError, DomainError
from wrapfit.estimators import ROBUST_KINDS, EstimatorKind, FitConfig, fit
from wrapfit.metrics import metric_direction, metric_divergence, metric_sqrt_as
from wrapfit.monitoring import default_bandwidth_grid, monitor_bandwidth, validate_grid
from wrapfit.torus import FloatArray, WrappedModelParams, wrap

logger = logging.getLogger(__name__)

CONDITION_TOLERANCE = 0.05
CALIBRATION_TOLERANCE = 0.03
_CORRELATION_ATTEMPTS = 50
_CORRELATION_SWEEPS = 200
SUMMARY_METRICS = ("sqrt_as", "delta_sigma", "swamping", "power", "mean_weight")


@dataclass(slots=True)
class ContaminationSpec:
    eps: float = 0.0
    k_eps: float = math.pi
    sigma_eps: float = 0.05
    contaminated_dims: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps < 0.5:
            raise DomainError(f"eps must be in [0, 0.5) (received {self.eps})")
        if not self.sigma_eps > 0:
            raise DomainError(f"sigma_eps must be > 0 (received {self.sigma_eps})")
        if self.contaminated_dims is not None:
            self.contaminated_dims = tuple(int(d) for d in self.contaminated_dims)
            if not self.contaminated_dims:
                raise DomainError("contaminated_dims must be non-empty when given")

    def dims_for(self, p: int) -> tuple[int, ...]:
        if self.contaminated_dims is None:
            # only the first two coordinates are contaminated in higher dimensions
            return (0, 1) if p >= 5 else tuple(range(p))
        if any(d < 0 or d >= p for d in self.contaminated_dims):
            raise DomainError(f"contaminated_dims {self.contaminated_dims} outside 0..{p - 1}")
        return self.contaminated_dims

    def n_outliers(self, n: int) -> int:
        return math.ceil(self.eps * n - 1e-9)


@dataclass(slots=True)
class ScenarioConfig:
    n: int = 250
    p: int = 2
    sigma: float = math.pi / 8
    eps: float = 0.0
    k_eps: float = math.pi
    sigma_eps: float = 0.05
    J: int = 2
    condition_number: float = 20.0
    n_trials: int = 500
    seed: int = 0
    contaminated_dims: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError(f"n must be >= 1 (received {self.n})")
        if self.p < 1:
            raise DomainError(f"p must be >= 1 (received {self.p})")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be > 0 (received {self.sigma})")
        if self.J < 0:
            raise DomainError(f"J must be >= 0 (received {self.J})")
        if self.condition_number < 1:
            raise DomainError(
                f"condition_number must be >= 1 (received {self.condition_number})"
            )
        if self.n_trials < 1:
            raise DomainError(f"n_trials must be >= 1 (received {self.n_trials})")
        self.contamination.dims_for(self.p)

    @property
    def contamination(self) -> ContaminationSpec:
        return ContaminationSpec(self.eps, self.k_eps, self.sigma_eps, self.contaminated_dims)

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        if self.contaminated_dims is not None:
            payload["contaminated_dims"] = list(self.contaminated_dims)
        return payload


@dataclass(slots=True)
class ContaminatedSample:
    data: FloatArray
    outlier_mask: np.ndarray
    truth: WrappedModelParams


def random_correlation(
    p: int, condition_number: float, rng: np.random.Generator
) -> FloatArray:
    """Random correlation matrix whose eigenvalue ratio is the condition number within 5%.

    Eigenvalues are log-uniform with endpoints 1 and κ, rotated by a Haar
    orthogonal matrix, then rescaled to unit diagonal. Rescaling moves the
    spectrum, so eigenvalues are reset on the current eigenvectors and the
    diagonal is rescaled again until the ratio settles.
    """
    if p < 2:
        raise DegenerateSampleError("random correlation needs p >= 2")
    if condition_number < 1:
        raise DomainError(f"condition_number must be >= 1 (received {condition_number})")
    if condition_number == 1:
        return np.eye(p)

    log_kappa = math.log(condition_number)
    for _ in range(_CORRELATION_ATTEMPTS):
        inner = rng.uniform(0.0, log_kappa, size=p - 2)
        eigenvalues = np.sort(np.exp(np.concatenate([[0.0, log_kappa], inner])))
        vectors = ortho_group.rvs(p, random_state=rng)
        for _ in range(_CORRELATION_SWEEPS):
            scatter = (vectors * eigenvalues) @ vectors.T
            scale = np.sqrt(np.diag(scatter))
            corr = scatter / np.outer(scale, scale)
            corr = 0.5 * (corr + corr.T)
            np.fill_diagonal(corr, 1.0)
            values, vectors = np.linalg.eigh(corr)
            if values[0] > 0 and abs(values[-1] / values[0] / condition_number - 1.0) <= (
                CONDITION_TOLERANCE
            ):
                return corr
    raise ConvergenceError(
        f"could not build a {p}x{p} correlation matrix with condition number {condition_number}"
    )


def scenario_params(scenario: ScenarioConfig, rng: np.random.Generator) -> WrappedModelParams:
    """WN(0, Σ) with Σ = σ² R, so every marginal standard deviation is σ."""
    if scenario.p == 1:
        corr = np.eye(1)
    else:
        corr = random_correlation(scenario.p, scenario.condition_number, rng)
    return WrappedModelParams(np.zeros(scenario.p), scenario.sigma**2 * corr)


def smallest_eigenvector(sigma: FloatArray, dims: Sequence[int]) -> FloatArray:
    block = sigma[np.ix_(list(dims), list(dims))]
    _, vectors = np.linalg.eigh(block)
    direction = vectors[:, 0]
    if direction[np.argmax(np.abs(direction))] < 0:
        direction = -direction
    full = np.zeros(sigma.shape[0])
    full[list(dims)] = direction
    return full


def generate_contaminated(
    scenario: ScenarioConfig, rng: np.random.Generator
) -> ContaminatedSample:
    """Draw a WN sample whose last ⌈εn⌉ rows are shifted along the least-variance axis."""
    truth = scenario_params(scenario, rng)
    spec = scenario.contamination
    dims = spec.dims_for(scenario.p)
    linear = rng.multivariate_normal(
        truth.mu, truth.sigma, size=scenario.n, method="cholesky"
    )
    n_out = spec.n_outliers(scenario.n)
    mask = np.zeros(scenario.n, dtype=bool)
    if n_out:
        mask[scenario.n - n_out :] = True
        direction = smallest_eigenvector(truth.sigma, dims)
        noise = np.zeros((n_out, scenario.p))
        noise[:, list(dims)] = rng.normal(0.0, spec.sigma_eps, size=(n_out, len(dims)))
        linear[mask] = linear[mask] + spec.k_eps * direction + noise
    logger.debug("generated n=%d p=%d with %d outliers", scenario.n, scenario.p, n_out)
    return ContaminatedSample(wrap(linear), mask, truth)


def trial_rng(seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, trial)))


@dataclass(slots=True)
class TrialMetrics:
    trial: int
    kind: str
    sqrt_as: float | None = None
    delta_sigma: float | None = None
    swamping: float | None = None
    power: float | None = None
    mean_weight: float | None = None
    iterations: int | None = None
    converged: bool | None = None
    elapsed: float = 0.0
    error: str | None = None

    def csv_row(self) -> dict[str, Any]:
        row = asdict(self)
        row.pop("elapsed")
        return row


CSV_FIELDS = tuple(f.name for f in fields(TrialMetrics) if f.name != "elapsed")


@dataclass(slots=True)
class MonteCarloRun:
    scenario: ScenarioConfig
    kinds: list[EstimatorKind]
    rows: list[TrialMetrics]
    bandwidths: dict[str, float | None] = field(default_factory=dict)
    calibration: dict[str, dict[str, Any]] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    elapsed: float = 0.0

    def summary(self) -> dict[str, Any]:
        return summarize(self.rows, self.kinds)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "kinds": [str(kind) for kind in self.kinds],
            "bandwidths": dict(self.bandwidths),
            "calibration": dict(self.calibration),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "elapsed_seconds": self.elapsed,
            "trials_total": self.scenario.n_trials,
            "failures": sum(1 for row in self.rows if row.error is not None),
            "summary": self.summary(),
        }


def _quantiles(values: Iterable[float | None]) -> dict[str, float | None]:
    finite = np.array([v for v in values if v is not None and math.isfinite(v)], dtype=float)
    if finite.size == 0:
        return {"median": None, "q1": None, "q3": None}
    q1, median, q3 = np.percentile(finite, [25.0, 50.0, 75.0])
    return {"median": float(median), "q1": float(q1), "q3": float(q3)}


def summarize(rows: Sequence[TrialMetrics], kinds: Sequence[EstimatorKind]) -> dict[str, Any]:
    summary: dict[str, Any] = {}
    for kind in kinds:
        kind_rows = [row for row in rows if row.kind == str(kind)]
        entry: dict[str, Any] = {
            "trials": len(kind_rows),
            "failures": sum(1 for row in kind_rows if row.error is not None),
            "converged": sum(1 for row in kind_rows if row.converged),
            "mean_elapsed": float(np.mean([row.elapsed for row in kind_rows]))
            if kind_rows
            else 0.0,
        }
        for metric in SUMMARY_METRICS:
            entry[metric] = _quantiles(getattr(row, metric) for row in kind_rows)
            if metric in ("sqrt_as", "delta_sigma", "swamping", "power"):
                entry[metric]["direction"] = metric_direction(metric)
        summary[str(kind)] = entry
    return summary


def run_trial(
    scenario: ScenarioConfig,
    kinds: Sequence[EstimatorKind],
    config: FitConfig,
    bandwidths: Mapping[EstimatorKind, float] | None,
    alpha: float,
    trial: int,
) -> list[TrialMetrics]:
    rng = trial_rng(scenario.seed, trial)
    sample = generate_contaminated(scenario, rng)
    init_seed = int(rng.integers(0, 2**63 - 1))
    rows: list[TrialMetrics] = []
    for kind in kinds:
        kind_config = config
        if bandwidths is not None and kind in bandwidths:
            kind_config = config.with_bandwidth(bandwidths[kind], kind)
        row = TrialMetrics(trial=trial, kind=str(kind))
        start = perf_counter()
        try:
            result = fit(sample.data, kind, kind_config, seed=init_seed)
            report = detect_by_distance(result, alpha)
            swamping, power = swamping_and_power(report.flags, sample.outlier_mask)
            row.sqrt_as = metric_sqrt_as(result.params.mu, sample.truth.mu)
            row.delta_sigma = metric_divergence(result.params.sigma, sample.truth.sigma)
            row.swamping = swamping
            row.power = power
            row.mean_weight = result.mean_weight
            row.iterations = result.iterations
            row.converged = result.converged
        except Exception as exc:  # noqa: BLE001
            logger.warning("trial %d %s failed: %s", trial, kind, exc)
            row.error = str(exc)
        row.elapsed = perf_counter() - start
        rows.append(row)
    return rows


@dataclass(slots=True)
class Calibration:
    kind: EstimatorKind
    h: float
    downweighting: float
    within_tolerance: bool
    curve: list[tuple[float, float | None]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "h": self.h,
            "downweighting": self.downweighting,
            "within_tolerance": self.within_tolerance,
        }


def calibrate_bandwidths(
    scenario: ScenarioConfig,
    kinds: Sequence[EstimatorKind | str],
    config: FitConfig | None = None,
    grid: ArrayLike | Mapping[EstimatorKind, ArrayLike] | None = None,
    *,
    pilot_trials: int = 5,
    tolerance: float = CALIBRATION_TOLERANCE,
) -> dict[EstimatorKind, Calibration]:
    """Per-estimator bandwidth whose downweighting level matches the contamination rate.

    Picks the smallest h with |1 − w̄ − ε| within tolerance on pilot samples,
    otherwise the closest grid value. Pilot samples use their own RNG stream.
    """
    if pilot_trials < 1:
        raise DomainError(f"pilot_trials must be >= 1 (received {pilot_trials})")
    base = FitConfig(J=scenario.J) if config is None else config
    pilots = [
        generate_contaminated(scenario, trial_rng(scenario.seed, trial, stream=1)).data
        for trial in range(pilot_trials)
    ]
    calibrations: dict[EstimatorKind, Calibration] = {}
    for raw in kinds:
        kind = EstimatorKind(raw)
        if kind not in ROBUST_KINDS:
            continue
        if isinstance(grid, Mapping):
            kind_grid = validate_grid(grid[kind])
        elif grid is not None:
            kind_grid = validate_grid(grid)
        else:
            kind_grid = default_bandwidth_grid(pilots[0], kind=kind)

        levels = np.full((pilot_trials, kind_grid.size), np.nan)
        for index, sample in enumerate(pilots):
            result = monitor_bandwidth(sample, kind_grid, kind, base, seed=scenario.seed + index)
            for j, level in enumerate(result.downweighting):
                if level is not None:
                    levels[index, j] = level
        with np.errstate(invalid="ignore"):
            mean_levels = np.nanmean(levels, axis=0)
        curve = [
            (float(h), None if math.isnan(level) else float(level))
            for h, level in zip(kind_grid, mean_levels, strict=True)
        ]
        gaps = np.abs(mean_levels - scenario.eps)
        if np.all(np.isnan(gaps)):
            raise DomainError(f"calibration of {kind} failed at every bandwidth")
        inside = np.flatnonzero(gaps <= tolerance)
        chosen = int(inside[0]) if inside.size else int(np.nanargmin(gaps))
        calibrations[kind] = Calibration(
            kind=kind,
            h=float(kind_grid[chosen]),
            downweighting=float(mean_levels[chosen]),
            within_tolerance=bool(inside.size),
            curve=curve,
        )
        if not inside.size:
            logger.warning(
                "no bandwidth for %s within %.2f of eps=%.2f; using h=%.4g",
                kind,
                tolerance,
                scenario.eps,
                kind_grid[chosen],
            )
        logger.info(
            "calibrated %s: h=%.4g downweighting=%.4f", kind, kind_grid[chosen], mean_levels[chosen]
        )
    return calibrations


def run_monte_carlo(
    scenario: ScenarioConfig,
    kinds: Sequence[EstimatorKind | str],
    config: FitConfig | None = None,
    *,
    bandwidths: Mapping[EstimatorKind, float] | None = None,
    calibrate: bool = True,
    calibration_grid: ArrayLike | Mapping[EstimatorKind, ArrayLike] | None = None,
    pilot_trials: int = 5,
    alpha: float = DEFAULT_ALPHA,
    workers: int = 1,
) -> MonteCarloRun:
    """Run every trial of the scenario through each estimator.

    Without explicit ``bandwidths`` the weighted estimators are first
    calibrated on pilot samples so their downweighting level matches the
    contamination rate; ``calibrate=False`` keeps the configured bandwidths.
    Trials own independent RNG streams keyed by (seed, trial), so results do
    not depend on the worker count. Failures are recorded per row.
    """
    if not kinds:
        raise DomainError("at least one estimator kind is required")
    estimators = [EstimatorKind(kind) for kind in kinds]
    fit_config = FitConfig(J=scenario.J) if config is None else config
    if fit_config.J != scenario.J:
        fit_config = replace(fit_config, J=scenario.J)

    started_at = datetime.now(UTC)
    start = perf_counter()
    calibrations: dict[EstimatorKind, Calibration] = {}
    if bandwidths is None and calibrate:
        calibrations = calibrate_bandwidths(
            scenario, estimators, fit_config, calibration_grid, pilot_trials=pilot_trials
        )
        bandwidths = {kind: calibration.h for kind, calibration in calibrations.items()}

    job = partial(run_trial, scenario, estimators, fit_config, bandwidths, alpha)
    trials = range(scenario.n_trials)
    rows: list[TrialMetrics] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for trial_rows in pool.map(job, trials):
                rows.extend(trial_rows)
    else:
        for trial in trials:
            rows.extend(job(trial))
            logger.info("trial %d/%d done", trial + 1, scenario.n_trials)

    resolved = {
        str(kind): (
            bandwidths[kind]
            if bandwidths is not None and kind in bandwidths
            else fit_config.bandwidth_for(kind)
        )
        for kind in estimators
    }
    return MonteCarloRun(
        scenario=scenario,
        kinds=estimators,
        rows=rows,
        bandwidths=resolved,
        calibration={str(kind): item.to_dict() for kind, item in calibrations.items()},
        started_at=started_at.isoformat(),
        finished_at=datetime.now(UTC).isoformat(),
        elapsed=perf_counter() - start,
    )
