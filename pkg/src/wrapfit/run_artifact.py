from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from typing import Any

from wrapfit.detection import DetectionReport
from wrapfit.estimators import EstimatorKind, FitConfig, FitResult

REPORT_SCHEMA_VERSION = 1

_TOP_LEVEL_KEYS = {
    "schema_version",
    "estimator",
    "columns",
    "n",
    "p",
    "params",
    "iterations",
    "converged",
    "mean_weight",
    "log_likelihood",
    "config",
    "detection",
    "provenance",
}

_PARAMS_KEYS = {"mu", "sigma"}

_DETECTION_KEYS = {
    "alpha",
    "cutoff",
    "reference",
    "n_flagged",
    "flagged_fraction",
    "n_weight_flagged",
}


def build_fit_report(
    result: FitResult,
    detection: DetectionReport,
    *,
    columns: Sequence[str],
    config: FitConfig,
    provenance: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "estimator": str(result.kind),
        "columns": list(columns),
        "n": result.n,
        "p": result.p,
        "params": result.params.to_dict(),
        "iterations": result.iterations,
        "converged": result.converged,
        "mean_weight": result.mean_weight,
        "log_likelihood": result.log_likelihood,
        "config": config.to_dict(),
        "detection": detection.to_dict(),
        "provenance": {} if provenance is None else dict(provenance),
    }
    return validate_fit_report(report, source="fit report")


def validate_fit_report(payload: Mapping[str, Any], *, source: str) -> dict[str, Any]:
    report = _require_mapping(payload, source)
    _validate_key_set(report, required=_TOP_LEVEL_KEYS, path=source)

    version = _require_non_negative_int(report.get("schema_version"), f"{source}.schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise ValueError(
            f"{source}.schema_version={version} is unsupported (expected {REPORT_SCHEMA_VERSION})"
        )

    estimator = _require_non_empty_str(report.get("estimator"), f"{source}.estimator")
    try:
        EstimatorKind(estimator)
    except ValueError as exc:
        raise ValueError(f"{source}.estimator '{estimator}' is not a known estimator") from exc

    n = _require_non_negative_int(report.get("n"), f"{source}.n")
    p = _require_non_negative_int(report.get("p"), f"{source}.p")
    if p < 1:
        raise ValueError(f"{source}.p must be >= 1")
    columns = _require_list(report.get("columns"), f"{source}.columns")
    if len(columns) != p:
        raise ValueError(f"{source}.columns has {len(columns)} names for p={p}")
    for index, column in enumerate(columns):
        _require_non_empty_str(column, f"{source}.columns[{index}]")

    params = _require_mapping(report.get("params"), f"{source}.params")
    _validate_key_set(params, required=_PARAMS_KEYS, path=f"{source}.params")
    mu = _require_list(params.get("mu"), f"{source}.params.mu")
    if len(mu) != p:
        raise ValueError(f"{source}.params.mu must have length {p}")
    for index, value in enumerate(mu):
        _require_finite_number(value, f"{source}.params.mu[{index}]")
    sigma = _require_list(params.get("sigma"), f"{source}.params.sigma")
    if len(sigma) != p:
        raise ValueError(f"{source}.params.sigma must be {p}x{p}")
    for row_index, row in enumerate(sigma):
        row_values = _require_list(row, f"{source}.params.sigma[{row_index}]")
        if len(row_values) != p:
            raise ValueError(f"{source}.params.sigma must be {p}x{p}")
        for col_index, value in enumerate(row_values):
            _require_finite_number(value, f"{source}.params.sigma[{row_index}][{col_index}]")

    _require_non_negative_int(report.get("iterations"), f"{source}.iterations")
    _require_bool(report.get("converged"), f"{source}.converged")
    mean_weight = _require_finite_number(report.get("mean_weight"), f"{source}.mean_weight")
    if not 0.0 <= mean_weight <= 1.0:
        raise ValueError(f"{source}.mean_weight must be in [0, 1]")
    _require_finite_number(report.get("log_likelihood"), f"{source}.log_likelihood")
    _require_mapping(report.get("config"), f"{source}.config")
    _require_mapping(report.get("provenance"), f"{source}.provenance")

    detection = _require_mapping(report.get("detection"), f"{source}.detection")
    _validate_key_set(detection, required=_DETECTION_KEYS, path=f"{source}.detection")
    alpha = _require_finite_number(detection.get("alpha"), f"{source}.detection.alpha")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"{source}.detection.alpha must be in (0, 1)")
    _require_non_negative_finite_number(detection.get("cutoff"), f"{source}.detection.cutoff")
    _require_non_empty_str(detection.get("reference"), f"{source}.detection.reference")
    flagged = _require_non_negative_int(
        detection.get("n_flagged"), f"{source}.detection.n_flagged"
    )
    if flagged > n:
        raise ValueError(f"{source}.detection.n_flagged={flagged} exceeds n={n}")
    _require_non_negative_finite_number(
        detection.get("flagged_fraction"), f"{source}.detection.flagged_fraction"
    )
    _require_non_negative_int(
        detection.get("n_weight_flagged"), f"{source}.detection.n_weight_flagged"
    )

    return report


def _validate_key_set(
    payload: Mapping[str, Any],
    *,
    required: set[str],
    path: str,
) -> None:
    keys = set(payload.keys())
    missing = sorted(required - keys)
    extra = sorted(keys - required)
    if missing or extra:
        raise ValueError(f"{path} has invalid keys (missing={missing}, extra={extra})")


def _require_mapping(value: Any, path: str) -> dict[str, Any]:
    if not isinstance(value, Mapping):
        raise ValueError(f"{path} must be an object")
    return dict(value)


def _require_list(value: Any, path: str) -> list[Any]:
    if not isinstance(value, list):
        raise ValueError(f"{path} must be a list")
    return list(value)


def _require_non_empty_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ValueError(f"{path} must be a string")
    normalized = value.strip()
    if not normalized:
        raise ValueError(f"{path} must be a non-empty string")
    return normalized


def _require_non_negative_int(value: Any, path: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ValueError(f"{path} must be a non-negative integer")
    if value < 0:
        raise ValueError(f"{path} must be a non-negative integer")
    return value


def _require_bool(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"{path} must be a boolean")
    return value


def _require_non_negative_finite_number(value: Any, path: str) -> float:
    numeric = _require_finite_number(value, path)
    if numeric < 0:
        raise ValueError(f"{path} must be >= 0")
    return numeric


def _require_finite_number(value: Any, path: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ValueError(f"{path} must be a finite number")
    numeric = float(value)
    if not math.isfinite(numeric):
        raise ValueError(f"{path} must be a finite number")
    return numeric
