from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import pytest

from wrapfit.errors import ConfigError
from wrapfit.estimators import EstimatorKind
from wrapfit.schema import (
    RUN_CONFIG_SCHEMA,
    apply_overrides,
    dump_yaml,
    load_data_file,
    load_run_config,
    run_config_from_mapping,
)

BENCHMARKS = Path(__file__).resolve().parents[1] / "benchmarks"


def test_defaults_from_empty_mapping() -> None:
    config = run_config_from_mapping({})
    assert config.seed == 0
    assert config.estimator is EstimatorKind.WCEM_UNWRAP
    assert config.fit.h == pytest.approx(0.2)
    assert config.fit.raf.name == "gkl"
    assert config.scenario.sigma == pytest.approx(math.pi / 8)
    assert config.kinds == list(EstimatorKind)
    assert config.calibrate
    assert config.detection.alpha == pytest.approx(0.01)
    assert config.data.path is None
    assert not config.J_auto


def test_full_mapping() -> None:
    payload: dict[str, Any] = {
        "seed": 7,
        "fit": {"estimator": "WEM", "raf": "pwd", "lam": -0.5, "h": 0.3, "J": "auto"},
        "scenario": {"eps": 0.1, "kinds": ["em", "wcem-dist"], "contaminated_dims": [0]},
        "detection": {"alpha": 0.05, "reference": "chi2_unwrapped"},
        "monitor": {"grid": [0.1, 0.2]},
        "output": {"directory": "runs", "svg": True},
    }
    config = run_config_from_mapping(payload)
    assert config.estimator is EstimatorKind.WEM
    assert config.fit.raf.label == "pwd(lambda=-0.5)"
    assert config.J_auto
    assert config.scenario.seed == 7
    assert config.scenario.contaminated_dims == (0,)
    assert config.kinds == [EstimatorKind.EM, EstimatorKind.WCEM_DIST]
    assert config.detection.reference == "chi2_unwrapped"
    assert config.monitor.grid == [0.1, 0.2]
    assert config.output.directory == Path("runs")
    assert config.output.svg and not config.output.markdown


@pytest.mark.parametrize(
    ("payload", "message"),
    [
        ({"extra": 1}, "config has unknown keys"),
        ({"fit": {"bandwidth": 0.2}}, "fit has unknown keys"),
        ({"fit": []}, "section 'fit' must be a mapping"),
        ({"fit": {"estimator": "mle"}}, "'fit.estimator' must be one of"),
        ({"fit": {"raf": "hellinger"}}, "'fit.raf' must be one of"),
        ({"fit": {"h": "wide"}}, "'fit.h' must be numeric"),
        ({"fit": {"h": -1.0}}, "fit: bandwidth h must be > 0"),
        ({"fit": {"tau": 2.0}}, "fit: "),
        ({"fit": {"smooth_reference": "yes"}}, "must be true or false"),
        ({"scenario": {"eps": 0.6}}, "scenario: eps must be in"),
        ({"scenario": {"kinds": []}}, "scenario.kinds must be a non-empty list"),
        ({"detection": {"alpha": 1.5}}, "'detection.alpha' must be in (0, 1)"),
        ({"data": {"unit": "turns"}}, "data.unit must be one of"),
        ({"monitor": {"grid": 0.1}}, "monitor.grid must be a list"),
    ],
)
def test_invalid_config_raises(payload: dict[str, Any], message: str) -> None:
    with pytest.raises(ConfigError) as excinfo:
        run_config_from_mapping(payload)
    assert message in str(excinfo.value)


def test_load_data_file_yaml_and_json(tmp_path: Path) -> None:
    yaml_path = tmp_path / "run.yaml"
    yaml_path.write_text("seed: 3\nfit:\n  h: 0.4\n", encoding="utf-8")
    assert load_data_file(yaml_path) == {"seed": 3, "fit": {"h": 0.4}}
    json_path = tmp_path / "run.json"
    json_path.write_text('{"seed": 4}', encoding="utf-8")
    assert load_data_file(json_path) == {"seed": 4}
    empty = tmp_path / "empty.yaml"
    empty.write_text("", encoding="utf-8")
    assert load_data_file(empty) == {}
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_data_file(listing)


def test_load_run_config_resolves_relative_data_path(tmp_path: Path) -> None:
    dump_yaml(tmp_path / "cfg" / "run.yaml", {"data": {"path": "angles.csv", "unit": "degrees"}})
    config = load_run_config(tmp_path / "cfg" / "run.yaml")
    assert config.data.path == tmp_path / "cfg" / "angles.csv"
    assert config.data.unit == "degrees"


@pytest.mark.parametrize("name", ["clean_scenario.yaml", "contaminated_scenario.yaml"])
def test_benchmark_configs_load(name: str) -> None:
    config = load_run_config(BENCHMARKS / name)
    assert config.seed == 2024
    assert config.scenario.n_trials >= 1


def test_apply_overrides() -> None:
    config = run_config_from_mapping({"fit": {"estimator": "wcem-unwrap"}})
    updated = apply_overrides(
        config, seed=9, estimator="wcem-dist", h=0.7, n_trials=3, workers=2, alpha=0.05
    )
    assert updated.seed == 9 and updated.scenario.seed == 9
    assert updated.estimator is EstimatorKind.WCEM_DIST
    assert updated.fit.distance_bandwidth == pytest.approx(0.7)
    assert updated.fit.h == pytest.approx(0.2)
    assert updated.scenario.n_trials == 3
    assert updated.workers == 2
    assert updated.detection.alpha == pytest.approx(0.05)
    assert apply_overrides(config) == config
    with pytest.raises(ConfigError, match="--alpha"):
        apply_overrides(config, alpha=2.0)


def test_schema_sections_are_documented() -> None:
    assert set(RUN_CONFIG_SCHEMA) == {"data", "fit", "scenario", "detection", "monitor", "output"}
