from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from wrapfit.detection import detect_by_distance, tolerance_ellipses
from wrapfit.estimators import ROBUST_KINDS, EstimatorKind, fit, moment_estimate
from wrapfit.influence import (
    INFLUENCE_KINDS,
    InfluenceFunction,
    WrappedMixture,
    sigma_unwrapped_curve,
)
from wrapfit.ingest import AngleTable, export_table, ingest
from wrapfit.monitoring import default_bandwidth_grid, monitor_bandwidth
from wrapfit.provenance import collect_provenance
from wrapfit.raf import SUPPORTED_RAFS, RafKind
from wrapfit.reporting import (
    render_fit_markdown,
    render_monitor_svg,
    render_simulation_markdown,
    write_csv,
    write_curve_csv,
    write_ellipses_csv,
    write_json,
    write_markdown,
    write_monitor_csv,
    write_observations_csv,
    write_svg,
    write_trials_csv,
)
from wrapfit.run_artifact import build_fit_report
from wrapfit.schema import (
    RUN_CONFIG_SCHEMA,
    RunConfig,
    apply_overrides,
    dump_yaml,
    load_run_config,
    run_config_from_mapping,
)
from wrapfit.simulation import ScenarioConfig, generate_contaminated, run_monte_carlo, trial_rng
from wrapfit.torus import adequate_J, flat_torus_replicates, to_signed

logger = logging.getLogger(__name__)

_ESTIMATORS = [kind.value for kind in EstimatorKind]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wrapfit",
        description="Robust fitting of wrapped normal models to multivariate angular data.",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity (default WARNING)",
    )
    parser.add_argument("--seed", type=int, help="RNG seed; overrides the config value")
    subparsers = parser.add_subparsers(dest="command", required=True)

    ingest_parser = subparsers.add_parser(
        "ingest", help="Parse an angle table and optionally re-export it in radians"
    )
    ingest_parser.add_argument("data", type=Path, help="Delimited angle table with header")
    _add_unit_arguments(ingest_parser)
    ingest_parser.add_argument("--output", type=Path, help="Optional export path")
    ingest_parser.add_argument(
        "--signed", action="store_true", help="Export angles in [-pi, pi) instead of [0, 2pi)"
    )
    ingest_parser.set_defaults(handler=_cmd_ingest)

    fit_parser = subparsers.add_parser(
        "fit", help="Fit an estimator, flag outliers and write the fit report"
    )
    _add_config_arguments(fit_parser)
    fit_parser.add_argument("--data", type=Path, help="Angle table; overrides data.path")
    _add_unit_arguments(fit_parser)
    fit_parser.add_argument("--estimator", choices=_ESTIMATORS, help="Estimator kind")
    fit_parser.add_argument("--h", type=float, help="Bandwidth for the estimator's residuals")
    fit_parser.add_argument("--alpha", type=float, help="Detection significance level")
    fit_parser.add_argument(
        "--ellipses", action="store_true", help="Also write 0.99 tolerance-ellipse polylines"
    )
    fit_parser.add_argument(
        "--signed",
        action="store_true",
        help="Write observation angles in [-pi, pi); same as data.signed",
    )
    fit_parser.set_defaults(handler=_cmd_fit)

    simulate_parser = subparsers.add_parser(
        "simulate", help="Run a Monte Carlo scenario over the configured estimators"
    )
    _add_config_arguments(simulate_parser)
    simulate_parser.add_argument("--n-trials", type=int, help="Override scenario.n_trials")
    simulate_parser.add_argument("--workers", type=int, help="Worker processes")
    simulate_parser.add_argument("--alpha", type=float, help="Detection significance level")
    simulate_parser.add_argument(
        "--calibrate",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Calibrate robust bandwidths on pilot samples first (default: scenario.calibrate)",
    )
    simulate_parser.set_defaults(handler=_cmd_simulate)

    monitor_parser = subparsers.add_parser(
        "monitor", help="Refit over a bandwidth grid and record weight trajectories"
    )
    _add_config_arguments(monitor_parser)
    monitor_parser.add_argument("--data", type=Path, help="Angle table; overrides data.path")
    _add_unit_arguments(monitor_parser)
    monitor_parser.add_argument(
        "--estimator",
        choices=[kind.value for kind in ROBUST_KINDS],
        help="Weighted estimator to monitor",
    )
    monitor_parser.add_argument(
        "--grid", type=_grid_arg, help="Comma-separated increasing bandwidths"
    )
    monitor_parser.add_argument("--grid-size", type=int, help="Size of the default grid")
    monitor_parser.add_argument("--selected-h", type=float, help="Marker drawn on the SVG")
    monitor_parser.add_argument("--svg", action="store_true", help="Also write an SVG plot")
    monitor_parser.set_defaults(handler=_cmd_monitor)

    flat_parser = subparsers.add_parser(
        "flat-torus", help="Replicate data over 2*pi*j shifts for flat-torus plots"
    )
    flat_parser.add_argument("data", type=Path, help="Angle table")
    _add_unit_arguments(flat_parser)
    flat_parser.add_argument("--J", type=int, default=1, help="Replicate j over {-J..J}^p")
    flat_parser.add_argument(
        "--estimator", choices=_ESTIMATORS, help="Also write the fitted unwrapped points"
    )
    flat_parser.add_argument("--output", type=Path, required=True, help="Replicate CSV path")
    flat_parser.set_defaults(handler=_cmd_flat_torus)

    influence_parser = subparsers.add_parser(
        "influence", help="Tabulate location influence functions on a wrapped mixture"
    )
    influence_parser.add_argument(
        "--kinds",
        default=",".join(kind.value for kind in INFLUENCE_KINDS),
        help="Comma-separated functionals",
    )
    influence_parser.add_argument("--eps", type=float, default=0.0, help="Contamination level")
    influence_parser.add_argument("--sigma0", type=float, default=math.pi / 8)
    influence_parser.add_argument("--raf", choices=SUPPORTED_RAFS, default="gkl")
    influence_parser.add_argument("--tau", type=float, default=0.25)
    influence_parser.add_argument("--h", type=float, default=0.1)
    influence_parser.add_argument("--z-min", type=float, default=-2 * math.pi)
    influence_parser.add_argument("--z-max", type=float, default=2 * math.pi)
    influence_parser.add_argument("--points", type=int, default=721)
    influence_parser.add_argument("--output", type=Path, required=True, help="CSV path")
    influence_parser.set_defaults(handler=_cmd_influence)

    sigma_parser = subparsers.add_parser(
        "sigma-curve", help="Tabulate the unwrapped-model scale against sigma0"
    )
    sigma_parser.add_argument("--min", type=float, default=math.pi / 16, dest="sigma_min")
    sigma_parser.add_argument("--max", type=float, default=math.pi / 2, dest="sigma_max")
    sigma_parser.add_argument("--points", type=int, default=16)
    sigma_parser.add_argument("--output", type=Path, required=True, help="CSV path")
    sigma_parser.set_defaults(handler=_cmd_sigma_curve)

    init_parser = subparsers.add_parser(
        "init", help="Create a starter config and a synthetic angle table"
    )
    init_parser.add_argument("directory", type=Path, help="Target directory")
    init_parser.add_argument("--force", action="store_true", help="Overwrite existing files")
    init_parser.set_defaults(handler=_cmd_init)

    schema_parser = subparsers.add_parser("schema", help="Print the run config schema")
    schema_parser.add_argument("--json", action="store_true", help="Print JSON instead of YAML")
    schema_parser.set_defaults(handler=_cmd_schema)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        return int(args.handler(args))
    except Exception as exc:  # noqa: BLE001
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _add_unit_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--degrees", dest="unit", action="store_const", const="degrees", help="Input in degrees"
    )
    group.add_argument(
        "--radians", dest="unit", action="store_const", const="radians", help="Input in radians"
    )


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Run config (YAML or JSON)")
    parser.add_argument(
        "--output-dir", type=Path, help="Output directory; overrides output.directory"
    )
    parser.add_argument("--markdown", action="store_true", help="Also write a markdown summary")


def _grid_arg(value: str) -> list[float]:
    parts = [part.strip() for part in value.split(",") if part.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("bandwidth grid must not be empty")
    try:
        return [float(part) for part in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid bandwidth grid {value!r}") from exc


def _load_config(args: argparse.Namespace, **overrides: Any) -> RunConfig:
    config = (
        load_run_config(args.config) if args.config is not None else run_config_from_mapping({})
    )
    config = apply_overrides(config, seed=args.seed, **overrides)
    if getattr(args, "output_dir", None) is not None:
        config = replace(config, output=replace(config.output, directory=args.output_dir))
    if getattr(args, "markdown", False):
        config = replace(config, output=replace(config.output, markdown=True))
    return config


def _load_table(args: argparse.Namespace, config: RunConfig) -> AngleTable:
    path = getattr(args, "data", None) or config.data.path
    if path is None:
        raise ValueError("no data file given (use --data or data.path in the config)")
    unit = args.unit or config.data.unit
    return ingest(path, unit)


def _resolve_J(config: RunConfig, table: AngleTable) -> RunConfig:
    if not config.J_auto:
        return config
    J = adequate_J(moment_estimate(table.values))
    logger.info("J: auto resolved to %d", J)
    return replace(config, fit=replace(config.fit, J=J))


def _cmd_ingest(args: argparse.Namespace) -> int:
    table = ingest(args.data, args.unit or "radians")
    print(f"n={table.n} p={table.p} columns={','.join(table.columns)}")
    if args.output is not None:
        export_table(table, args.output, signed=args.signed)
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    config = _load_config(args, estimator=args.estimator, h=args.h, alpha=args.alpha)
    table = _load_table(args, config)
    config = _resolve_J(config, table)

    result = fit(table.values, config.estimator, config.fit, seed=config.seed)
    detection = detect_by_distance(
        result,
        config.detection.alpha,
        reference=config.detection.reference,  # type: ignore[arg-type]
        weight_threshold=config.detection.weight_threshold,
        mc_size=config.fit.mc_size,
        seed=config.seed,
    )
    provenance = collect_provenance(
        command="fit",
        seed=config.seed,
        data_path=getattr(args, "data", None) or config.data.path,
        config=config.fit.to_dict(),
    )
    report = build_fit_report(
        result, detection, columns=table.columns, config=config.fit, provenance=provenance
    )

    out_dir = config.output.directory
    write_json(out_dir / "fit_report.json", report)
    angles = to_signed(table.values) if args.signed or config.data.signed else table.values
    write_observations_csv(out_dir / "observations.csv", result, detection, table.columns, angles)
    if args.ellipses or config.output.ellipses:
        if table.p >= 2:
            write_ellipses_csv(
                out_dir / "ellipses.csv", tolerance_ellipses(result.params), table.columns
            )
        else:
            logger.warning("tolerance ellipses need p >= 2; skipped")
    if config.output.markdown:
        write_markdown(out_dir / "fit_report.md", render_fit_markdown(report))
    print(
        f"{result.kind}: converged={result.converged} iterations={result.iterations} "
        f"flagged={detection.n_flagged}/{result.n}"
    )
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args, n_trials=args.n_trials, workers=args.workers, alpha=args.alpha)
    calibrate = config.calibrate if args.calibrate is None else args.calibrate
    run = run_monte_carlo(
        config.scenario,
        config.kinds,
        config.fit,
        calibrate=calibrate,
        calibration_grid=config.monitor.grid,
        pilot_trials=config.pilot_trials,
        alpha=config.detection.alpha,
        workers=config.workers,
    )
    payload = run.to_dict()
    payload["provenance"] = collect_provenance(
        command="simulate",
        seed=config.seed,
        config={"fit": config.fit.to_dict(), "scenario": config.scenario.to_dict()},
    )

    out_dir = config.output.directory
    write_trials_csv(out_dir / "trials.csv", run.rows)
    write_json(out_dir / "summary.json", payload)
    if config.output.markdown:
        write_markdown(out_dir / "summary.md", render_simulation_markdown(payload))
    failures = payload["failures"]
    if failures:
        logger.warning("%d trial fits failed; see trials.csv", failures)
    print(f"trials={config.scenario.n_trials} kinds={len(run.kinds)} failures={failures}")
    return 0


def _cmd_monitor(args: argparse.Namespace) -> int:
    config = _load_config(args)
    table = _load_table(args, config)
    config = _resolve_J(config, table)
    kind = EstimatorKind(args.estimator) if args.estimator else config.estimator
    if kind not in ROBUST_KINDS:
        kind = EstimatorKind.WCEM_UNWRAP
    if args.grid is not None:
        grid = args.grid
    elif config.monitor.grid is not None:
        grid = config.monitor.grid
    else:
        grid = default_bandwidth_grid(
            table.values,
            args.grid_size or config.monitor.grid_size,
            h_min=config.monitor.h_min,
            h_max=config.monitor.h_max,
            kind=kind,
        ).tolist()
    selected = args.selected_h if args.selected_h is not None else config.monitor.selected_h

    result = monitor_bandwidth(
        table.values, grid, kind, config.fit, seed=config.seed, selected_h=selected
    )
    out_dir = config.output.directory
    write_monitor_csv(out_dir / "monitor_weights.csv", result)
    write_curve_csv(out_dir / "monitor_curve.csv", result)
    if args.svg or config.output.svg:
        write_svg(out_dir / "monitor.svg", render_monitor_svg(result))
    failed = sum(1 for error in result.errors if error is not None)
    print(f"{kind}: grid={len(grid)} failed={failed}")
    return 0


def _cmd_flat_torus(args: argparse.Namespace) -> int:
    table = ingest(args.data, args.unit or "radians")
    replicates, j_rows, index = flat_torus_replicates(table.values, args.J)
    fieldnames = [
        "observation",
        *(f"j_{name}" for name in table.columns),
        *table.columns,
    ]
    rows = (
        {
            "observation": int(index[r]),
            **{f"j_{name}": int(j_rows[r, k]) for k, name in enumerate(table.columns)},
            **{name: float(replicates[r, k]) for k, name in enumerate(table.columns)},
        }
        for r in range(replicates.shape[0])
    )
    count = write_csv(args.output, fieldnames, rows)

    if args.estimator is not None:
        result = fit(table.values, args.estimator, seed=args.seed)
        fitted_rows = (
            {
                "observation": i,
                **{f"j_{name}": int(result.j_hat[i, k]) for k, name in enumerate(table.columns)},
                **{name: float(result.unwrapped[i, k]) for k, name in enumerate(table.columns)},
            }
            for i in range(result.n)
        )
        write_csv(args.output.with_name(args.output.stem + "_fitted.csv"), fieldnames, fitted_rows)
    print(f"rows={count}")
    return 0


def _cmd_influence(args: argparse.Namespace) -> int:
    kinds = [EstimatorKind(kind.strip()) for kind in args.kinds.split(",") if kind.strip()]
    mixture = WrappedMixture(eps=args.eps, sigma0=args.sigma0)
    raf = RafKind(args.raf, tau=args.tau)
    z = np.linspace(args.z_min, args.z_max, args.points)
    columns: dict[str, Any] = {"z": z}
    for kind in kinds:
        functional = InfluenceFunction(kind, mixture, raf, args.h)
        columns[str(kind)] = functional(z)
        columns[f"{kind}_mle"] = functional.mle_reference(z)
        logger.info("%s location at eps=%g: %.6f", kind, args.eps, functional.location)
    fieldnames = list(columns)
    rows = (
        {name: float(values[i]) for name, values in columns.items()} for i in range(z.size)
    )
    write_csv(args.output, fieldnames, rows)
    return 0


def _cmd_sigma_curve(args: argparse.Namespace) -> int:
    sigmas = np.linspace(args.sigma_min, args.sigma_max, args.points)
    curve = sigma_unwrapped_curve(sigmas)
    write_csv(
        args.output,
        ["sigma0", "sigma_unwrapped"],
        ({"sigma0": s0, "sigma_unwrapped": su} for s0, su in curve),
    )
    return 0


def _cmd_init(args: argparse.Namespace) -> int:
    directory = args.directory
    directory.mkdir(parents=True, exist_ok=True)

    config_path = directory / "wrapfit.yaml"
    data_path = directory / "angles.csv"
    file_paths = [config_path, data_path]
    if (not args.force) and any(path.exists() for path in file_paths):
        existing = [str(path.name) for path in file_paths if path.exists()]
        raise FileExistsError(
            "Target directory already contains files: "
            + ", ".join(sorted(existing))
            + ". Use --force to overwrite."
        )

    seed = 0 if args.seed is None else args.seed
    scenario = ScenarioConfig(n=200, p=2, eps=0.1, n_trials=20, seed=seed)
    sample = generate_contaminated(scenario, trial_rng(seed, 0))
    export_table(AngleTable(["phi", "psi"], sample.data), data_path, unit="degrees")

    payload = _starter_config_payload(seed)
    run_config_from_mapping(payload)
    dump_yaml(config_path, payload)
    print(str(config_path))
    return 0


def _starter_config_payload(seed: int) -> dict[str, Any]:
    return {
        "seed": seed,
        "data": {"path": "angles.csv", "unit": "degrees", "signed": False},
        "fit": {"estimator": "wcem-unwrap", "raf": "gkl", "tau": 0.25, "h": 0.2, "J": 2},
        "scenario": {
            "n": 250,
            "p": 2,
            "eps": 0.1,
            "n_trials": 20,
            "kinds": ["em", "wcem-unwrap"],
        },
        "detection": {"alpha": 0.01},
        "monitor": {"grid_size": 15},
        "output": {"directory": "wrapfit-out", "markdown": True},
    }


def _cmd_schema(args: argparse.Namespace) -> int:
    if args.json:
        print(json.dumps(RUN_CONFIG_SCHEMA, indent=2, sort_keys=True))
    else:
        print(yaml.safe_dump(RUN_CONFIG_SCHEMA, sort_keys=False).rstrip())
    return 0
