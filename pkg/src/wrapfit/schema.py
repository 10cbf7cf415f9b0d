from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from wrapfit.errors import ConfigError
from wrapfit.estimators import EstimatorKind, FitConfig
from wrapfit.ingest import SUPPORTED_UNITS
from wrapfit.raf import SUPPORTED_RAFS, RafKind
from wrapfit.simulation import ScenarioConfig

RUN_CONFIG_SCHEMA: dict[str, dict[str, Any]] = {
    "data": {"path": None, "unit": "radians", "signed": False},
    "fit": {
        "estimator": "wcem-unwrap",
        "raf": "gkl",
        "tau": 0.25,
        "lam": 0.0,
        "h": 0.2,
        "J": 2,
        "tol": 1e-6,
        "max_iter": 500,
        "n_subsamples": 20,
        "subsample_size": None,
        "ridge": 1e-8,
        "root_threshold": -0.5,
        "distance_bandwidth": None,
        "distance_reference": "chi2",
        "smooth_reference": True,
        "unwrapped_exact": False,
        "mc_size": 100_000,
    },
    "scenario": {
        "n": 250,
        "p": 2,
        "sigma": math.pi / 8,
        "eps": 0.0,
        "k_eps": math.pi,
        "sigma_eps": 0.05,
        "J": 2,
        "condition_number": 20.0,
        "n_trials": 500,
        "contaminated_dims": None,
        "kinds": ["em", "cem", "wem", "wcem-torus", "wcem-unwrap", "wcem-dist"],
        "workers": 1,
        "calibrate": True,
        "pilot_trials": 5,
    },
    "detection": {"alpha": 0.01, "weight_threshold": 0.5, "reference": "chi2"},
    "monitor": {"grid": None, "grid_size": 15, "h_min": None, "h_max": None, "selected_h": None},
    "output": {"directory": "wrapfit-out", "markdown": False, "svg": False, "ellipses": False},
}

_TOP_LEVEL_KEYS = {"seed", *RUN_CONFIG_SCHEMA}


@dataclass(slots=True)
class DataOptions:
    path: Path | None = None
    unit: str = "radians"
    signed: bool = False


@dataclass(slots=True)
class DetectionOptions:
    alpha: float = 0.01
    weight_threshold: float = 0.5
    reference: str = "chi2"


@dataclass(slots=True)
class MonitorOptions:
    grid: list[float] | None = None
    grid_size: int = 15
    h_min: float | None = None
    h_max: float | None = None
    selected_h: float | None = None


@dataclass(slots=True)
class OutputOptions:
    directory: Path = Path("wrapfit-out")
    markdown: bool = False
    svg: bool = False
    ellipses: bool = False


@dataclass(slots=True)
class RunConfig:
    seed: int = 0
    estimator: EstimatorKind = EstimatorKind.WCEM_UNWRAP
    fit: FitConfig = field(default_factory=FitConfig)
    J_auto: bool = False
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    kinds: list[EstimatorKind] = field(default_factory=lambda: list(EstimatorKind))
    workers: int = 1
    calibrate: bool = True
    pilot_trials: int = 5
    data: DataOptions = field(default_factory=DataOptions)
    detection: DetectionOptions = field(default_factory=DetectionOptions)
    monitor: MonitorOptions = field(default_factory=MonitorOptions)
    output: OutputOptions = field(default_factory=OutputOptions)


def load_data_file(path: str | Path) -> dict[str, Any]:
    file_path = Path(path)
    raw = file_path.read_text(encoding="utf-8")
    if file_path.suffix.lower() == ".json":
        data = json.loads(raw)
    else:
        parsed = yaml.safe_load(raw)
        data = {} if parsed is None else parsed
    if not isinstance(data, dict):
        raise ConfigError(f"Top-level data in {file_path} must be an object/mapping")
    return data


def dump_yaml(path: str | Path, payload: Mapping[str, Any]) -> None:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(yaml.safe_dump(dict(payload), sort_keys=False), encoding="utf-8")


def load_run_config(path: str | Path) -> RunConfig:
    return run_config_from_mapping(load_data_file(path), base_dir=Path(path).parent)


def run_config_from_mapping(
    data: Mapping[str, Any], *, base_dir: Path | None = None
) -> RunConfig:
    _check_keys(data, _TOP_LEVEL_KEYS, "config")
    sections = {name: _section(data, name) for name in RUN_CONFIG_SCHEMA}
    seed = _int(data.get("seed", 0), "seed")

    fit_section = sections["fit"]
    estimator = _estimator(fit_section["estimator"], "fit.estimator")
    J_raw = fit_section["J"]
    J_auto = isinstance(J_raw, str) and J_raw.strip().lower() == "auto"
    fit_config = _fit_config(fit_section, 2 if J_auto else _int(J_raw, "fit.J"))

    scenario_section = sections["scenario"]
    scenario = _scenario(scenario_section, seed)
    kinds_raw = scenario_section["kinds"]
    if not isinstance(kinds_raw, list) or not kinds_raw:
        raise ConfigError("scenario.kinds must be a non-empty list")
    kinds = [_estimator(kind, "scenario.kinds") for kind in kinds_raw]

    data_section = sections["data"]
    data_path = data_section["path"]
    resolved_path: Path | None = None
    if data_path is not None:
        resolved_path = Path(_required_str(data_section, "path", "data"))
        if base_dir is not None and not resolved_path.is_absolute():
            resolved_path = base_dir / resolved_path
    unit = _required_str(data_section, "unit", "data")
    if unit not in SUPPORTED_UNITS:
        raise ConfigError(f"data.unit must be one of {', '.join(SUPPORTED_UNITS)}")

    detection_section = sections["detection"]
    detection = DetectionOptions(
        alpha=_probability(detection_section["alpha"], "detection.alpha"),
        weight_threshold=_probability(
            detection_section["weight_threshold"], "detection.weight_threshold"
        ),
        reference=_choice(
            detection_section["reference"], ("chi2", "chi2_unwrapped"), "detection.reference"
        ),
    )

    monitor_section = sections["monitor"]
    grid_raw = monitor_section["grid"]
    grid: list[float] | None = None
    if grid_raw is not None:
        if not isinstance(grid_raw, list):
            raise ConfigError("monitor.grid must be a list of bandwidths")
        grid = [_float(value, "monitor.grid") for value in grid_raw]
    monitor = MonitorOptions(
        grid=grid,
        grid_size=_int(monitor_section["grid_size"], "monitor.grid_size"),
        h_min=_optional_float(monitor_section["h_min"], "monitor.h_min"),
        h_max=_optional_float(monitor_section["h_max"], "monitor.h_max"),
        selected_h=_optional_float(monitor_section["selected_h"], "monitor.selected_h"),
    )

    output_section = sections["output"]
    output = OutputOptions(
        directory=Path(_required_str(output_section, "directory", "output")),
        markdown=_bool(output_section["markdown"], "output.markdown"),
        svg=_bool(output_section["svg"], "output.svg"),
        ellipses=_bool(output_section["ellipses"], "output.ellipses"),
    )

    return RunConfig(
        seed=seed,
        estimator=estimator,
        fit=fit_config,
        J_auto=J_auto,
        scenario=scenario,
        kinds=kinds,
        workers=_int(scenario_section["workers"], "scenario.workers"),
        calibrate=_bool(scenario_section["calibrate"], "scenario.calibrate"),
        pilot_trials=_int(scenario_section["pilot_trials"], "scenario.pilot_trials"),
        data=DataOptions(resolved_path, unit, _bool(data_section["signed"], "data.signed")),
        detection=detection,
        monitor=monitor,
        output=output,
    )


def _section(data: Mapping[str, Any], name: str) -> dict[str, Any]:
    raw = data.get(name, {})
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"section '{name}' must be a mapping")
    defaults = RUN_CONFIG_SCHEMA[name]
    _check_keys(raw, set(defaults), name)
    return {**defaults, **raw}


def _check_keys(data: Mapping[str, Any], allowed: set[str], path: str) -> None:
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(
            f"{path} has unknown keys {extra}. Allowed: {', '.join(sorted(allowed))}"
        )


def _fit_config(section: Mapping[str, Any], J: int) -> FitConfig:
    raf_name = _choice(section["raf"], SUPPORTED_RAFS, "fit.raf")
    try:
        raf = RafKind(
            raf_name,  # type: ignore[arg-type]
            tau=_float(section["tau"], "fit.tau"),
            lam=_float(section["lam"], "fit.lam"),
        )
        return FitConfig(
            raf=raf,
            h=_float(section["h"], "fit.h"),
            J=J,
            tol=_float(section["tol"], "fit.tol"),
            max_iter=_int(section["max_iter"], "fit.max_iter"),
            n_subsamples=_int(section["n_subsamples"], "fit.n_subsamples"),
            subsample_size=_optional_int(section["subsample_size"], "fit.subsample_size"),
            ridge=_float(section["ridge"], "fit.ridge"),
            root_threshold=_float(section["root_threshold"], "fit.root_threshold"),
            distance_bandwidth=_optional_float(
                section["distance_bandwidth"], "fit.distance_bandwidth"
            ),
            distance_reference=_choice(  # type: ignore[arg-type]
                section["distance_reference"], ("chi2", "chi2_unwrapped"), "fit.distance_reference"
            ),
            smooth_reference=_bool(section["smooth_reference"], "fit.smooth_reference"),
            unwrapped_exact=_bool(section["unwrapped_exact"], "fit.unwrapped_exact"),
            mc_size=_int(section["mc_size"], "fit.mc_size"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"fit: {exc}") from exc


def _scenario(section: Mapping[str, Any], seed: int) -> ScenarioConfig:
    dims_raw = section["contaminated_dims"]
    dims: tuple[int, ...] | None = None
    if dims_raw is not None:
        if not isinstance(dims_raw, list):
            raise ConfigError("scenario.contaminated_dims must be a list of indices")
        dims = tuple(_int(value, "scenario.contaminated_dims") for value in dims_raw)
    try:
        return ScenarioConfig(
            n=_int(section["n"], "scenario.n"),
            p=_int(section["p"], "scenario.p"),
            sigma=_float(section["sigma"], "scenario.sigma"),
            eps=_float(section["eps"], "scenario.eps"),
            k_eps=_float(section["k_eps"], "scenario.k_eps"),
            sigma_eps=_float(section["sigma_eps"], "scenario.sigma_eps"),
            J=_int(section["J"], "scenario.J"),
            condition_number=_float(section["condition_number"], "scenario.condition_number"),
            n_trials=_int(section["n_trials"], "scenario.n_trials"),
            seed=seed,
            contaminated_dims=dims,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """Return a copy with non-None CLI values applied on top of the file values."""
    updated = config
    seed = overrides.get("seed")
    if seed is not None:
        updated = replace(updated, seed=seed, scenario=replace(updated.scenario, seed=seed))
    estimator = overrides.get("estimator")
    if estimator is not None:
        updated = replace(updated, estimator=_estimator(estimator, "--estimator"))
    h = overrides.get("h")
    if h is not None:
        updated = replace(updated, fit=updated.fit.with_bandwidth(h, updated.estimator))
    n_trials = overrides.get("n_trials")
    if n_trials is not None:
        updated = replace(updated, scenario=replace(updated.scenario, n_trials=n_trials))
    workers = overrides.get("workers")
    if workers is not None:
        updated = replace(updated, workers=workers)
    alpha = overrides.get("alpha")
    if alpha is not None:
        updated = replace(
            updated, detection=replace(updated.detection, alpha=_probability(alpha, "--alpha"))
        )
    return updated


def _estimator(value: Any, key: str) -> EstimatorKind:
    try:
        return EstimatorKind(str(value).strip().lower())
    except ValueError as exc:
        allowed = ", ".join(kind.value for kind in EstimatorKind)
        raise ConfigError(f"'{key}' must be one of {allowed} (received {value!r})") from exc


def _required_str(data: Mapping[str, Any], key: str, section: str) -> str:
    value = data.get(key)
    if value is None:
        raise ConfigError(f"Missing required key: {section}.{key}")
    value_str = str(value).strip()
    if not value_str:
        raise ConfigError(f"Key '{section}.{key}' must be a non-empty string")
    return value_str


def _choice(value: Any, allowed: tuple[str, ...], key: str) -> str:
    text = str(value).strip()
    if text not in allowed:
        raise ConfigError(f"'{key}' must be one of {', '.join(allowed)} (received {value!r})")
    return text


def _float(value: Any, key: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"'{key}' must be numeric")
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{key}' must be numeric") from exc


def _optional_float(value: Any, key: str) -> float | None:
    return None if value is None else _float(value, key)


def _int(value: Any, key: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"'{key}' must be an integer")
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, int):
        return value
    try:
        return int(str(value).strip())
    except ValueError as exc:
        raise ConfigError(f"'{key}' must be an integer") from exc


def _optional_int(value: Any, key: str) -> int | None:
    return None if value is None else _int(value, key)


def _bool(value: Any, key: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"'{key}' must be true or false")
    return value


def _probability(value: Any, key: str) -> float:
    numeric = _float(value, key)
    if not 0.0 < numeric < 1.0:
        raise ConfigError(f"'{key}' must be in (0, 1) (received {numeric})")
    return numeric
