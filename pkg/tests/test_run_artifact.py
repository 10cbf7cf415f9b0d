from __future__ import annotations

import copy
from typing import Any

import numpy as np
import pytest

from wrapfit.detection import detect_by_distance
from wrapfit.estimators import FitConfig, em_fit
from wrapfit.provenance import collect_provenance
from wrapfit.run_artifact import REPORT_SCHEMA_VERSION, build_fit_report, validate_fit_report


@pytest.fixture
def fit_report(clean_sample: np.ndarray) -> dict[str, Any]:
    config = FitConfig(n_subsamples=2)
    result = em_fit(clean_sample, config, seed=0)
    return build_fit_report(
        result,
        detect_by_distance(result),
        columns=["phi", "psi"],
        config=config,
        provenance=collect_provenance(command="fit", seed=0),
    )


def test_build_fit_report_shape(fit_report: dict[str, Any]) -> None:
    assert fit_report["schema_version"] == REPORT_SCHEMA_VERSION
    assert fit_report["estimator"] == "em"
    assert fit_report["n"] == 250 and fit_report["p"] == 2
    assert fit_report["mean_weight"] == 1.0
    assert fit_report["detection"]["n_flagged"] <= 250
    assert fit_report["provenance"]["command"] == "fit"
    assert set(fit_report["provenance"]) == {
        "captured_at",
        "command",
        "seed",
        "data",
        "config_digest",
        "python_version",
        "git_commit",
        "dependencies",
    }
    assert set(fit_report["provenance"]["dependencies"]) == {"wrapfit", "numpy", "scipy", "pyyaml"}
    assert fit_report["config"]["raf"]["name"] == "gkl"


def test_validate_fit_report_rejects_missing_key(fit_report: dict[str, Any]) -> None:
    payload = copy.deepcopy(fit_report)
    payload.pop("detection")
    with pytest.raises(ValueError, match="invalid keys"):
        validate_fit_report(payload, source="candidate")


def test_validate_fit_report_rejects_version(fit_report: dict[str, Any]) -> None:
    payload = copy.deepcopy(fit_report)
    payload["schema_version"] = 99
    with pytest.raises(ValueError, match="unsupported"):
        validate_fit_report(payload, source="candidate")


def test_validate_fit_report_rejects_unknown_estimator(fit_report: dict[str, Any]) -> None:
    payload = copy.deepcopy(fit_report)
    payload["estimator"] = "kmeans"
    with pytest.raises(ValueError, match="not a known estimator"):
        validate_fit_report(payload, source="candidate")


def test_validate_fit_report_rejects_column_mismatch(fit_report: dict[str, Any]) -> None:
    payload = copy.deepcopy(fit_report)
    payload["columns"] = ["phi"]
    with pytest.raises(ValueError, match="columns has 1 names"):
        validate_fit_report(payload, source="candidate")


def test_validate_fit_report_rejects_bad_scatter(fit_report: dict[str, Any]) -> None:
    payload = copy.deepcopy(fit_report)
    payload["params"]["sigma"][1] = [0.1]
    with pytest.raises(ValueError, match="2x2"):
        validate_fit_report(payload, source="candidate")
    payload = copy.deepcopy(fit_report)
    payload["params"]["sigma"][0][0] = float("nan")
    with pytest.raises(ValueError, match="finite"):
        validate_fit_report(payload, source="candidate")


def test_validate_fit_report_rejects_weight_and_flag_counts(fit_report: dict[str, Any]) -> None:
    payload = copy.deepcopy(fit_report)
    payload["mean_weight"] = 1.5
    with pytest.raises(ValueError, match="mean_weight"):
        validate_fit_report(payload, source="candidate")
    payload = copy.deepcopy(fit_report)
    payload["detection"]["n_flagged"] = 251
    with pytest.raises(ValueError, match="exceeds n=250"):
        validate_fit_report(payload, source="candidate")
    payload = copy.deepcopy(fit_report)
    payload["detection"]["alpha"] = 0.0
    with pytest.raises(ValueError, match="alpha"):
        validate_fit_report(payload, source="candidate")
