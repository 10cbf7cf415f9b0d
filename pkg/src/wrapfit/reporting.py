from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any
from xml.sax.saxutils import escape

from wrapfit.detection import DetectionReport, ToleranceEllipse
from wrapfit.estimators import FitResult
from wrapfit.monitoring import MonitoringResult
from wrapfit.simulation import CSV_FIELDS, TrialMetrics
from wrapfit.torus import FloatArray

_SVG_WIDTH = 640
_SVG_HEIGHT = 400
_SVG_MARGIN = 48
_MARKDOWN_METRICS = ("sqrt_as", "delta_sigma", "swamping", "power", "mean_weight")


def read_json(path: str | Path) -> dict[str, Any]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(payload, dict):
        raise ValueError(f"JSON payload at {path} must be an object")
    return payload


def write_json(path: str | Path, payload: Mapping[str, Any]) -> None:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_markdown(path: str | Path, text: str) -> None:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text.strip() + "\n", encoding="utf-8")


def write_csv(
    path: str | Path, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]
) -> int:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with out_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key)) for key in fieldnames})
            count += 1
    return count


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".10g")
    return value


def observation_rows(
    result: FitResult, detection: DetectionReport, columns: Sequence[str], data: FloatArray
) -> tuple[list[str], list[dict[str, Any]]]:
    """Per-observation table: angles, weight, d², flags, x̂ᵢ and ĵᵢ."""
    fieldnames = [
        "observation",
        *columns,
        "weight",
        "d2",
        "flagged",
        "weight_flagged",
        *(f"x_{name}" for name in columns),
        *(f"j_{name}" for name in columns),
    ]
    rows: list[dict[str, Any]] = []
    for i in range(result.n):
        row: dict[str, Any] = {"observation": i}
        for k, name in enumerate(columns):
            row[name] = float(data[i, k])
            row[f"x_{name}"] = float(result.unwrapped[i, k])
            row[f"j_{name}"] = int(result.j_hat[i, k])
        row["weight"] = float(result.weights[i])
        row["d2"] = float(detection.d2[i])
        row["flagged"] = bool(detection.flags[i])
        row["weight_flagged"] = bool(detection.weight_flags[i])
        rows.append(row)
    return fieldnames, rows


def write_observations_csv(
    path: str | Path,
    result: FitResult,
    detection: DetectionReport,
    columns: Sequence[str],
    data: FloatArray,
) -> int:
    fieldnames, rows = observation_rows(result, detection, columns, data)
    return write_csv(path, fieldnames, rows)


def write_ellipses_csv(
    path: str | Path, ellipses: Sequence[ToleranceEllipse], columns: Sequence[str]
) -> int:
    rows = (
        {
            "dim_a": columns[ellipse.dims[0]],
            "dim_b": columns[ellipse.dims[1]],
            "point": index,
            "a": float(point[0]),
            "b": float(point[1]),
        }
        for ellipse in ellipses
        for index, point in enumerate(ellipse.points)
    )
    return write_csv(path, ["dim_a", "dim_b", "point", "a", "b"], rows)


def write_trials_csv(path: str | Path, rows: Sequence[TrialMetrics]) -> int:
    ordered = sorted(rows, key=lambda row: (row.trial, row.kind))
    return write_csv(path, CSV_FIELDS, (row.csv_row() for row in ordered))


def write_monitor_csv(path: str | Path, result: MonitoringResult) -> int:
    return write_csv(path, ["observation", "h", "weight"], result.long_rows())


def write_curve_csv(path: str | Path, result: MonitoringResult) -> int:
    return write_csv(path, ["h", "downweighting", "error"], result.curve_rows())


def render_fit_markdown(report: Mapping[str, Any]) -> str:
    lines = [
        f"# Fit Report: {report.get('estimator', '<unknown>')}",
        "",
        f"- Observations: `{report.get('n', 0)}`",
        f"- Dimension: `{report.get('p', 0)}`",
        f"- Iterations: `{report.get('iterations', 0)}`",
        f"- Converged: `{report.get('converged', False)}`",
        f"- Mean Weight: `{float(report.get('mean_weight', 0.0)):.4f}`",
    ]

    detection = report.get("detection", {})
    if isinstance(detection, dict):
        lines.extend(
            [
                f"- Alpha: `{detection.get('alpha', '<none>')}`",
                f"- Cutoff: `{float(detection.get('cutoff', 0.0)):.4f}`",
                f"- Flagged: `{detection.get('n_flagged', 0)}` "
                f"({100.0 * float(detection.get('flagged_fraction', 0.0)):.1f}%)",
            ]
        )

    provenance = report.get("provenance")
    if isinstance(provenance, dict) and provenance:
        lines.extend(["", "## Provenance"])
        lines.append(f"- Captured At: `{provenance.get('captured_at', '<none>')}`")
        lines.append(f"- Seed: `{provenance.get('seed', '<none>')}`")
        lines.append(f"- Git Commit: `{provenance.get('git_commit') or '<none>'}`")
        lines.append(f"- Python: `{provenance.get('python_version', '<none>')}`")
        versions = provenance.get("dependencies", {})
        if isinstance(versions, dict) and versions:
            pinned = ", ".join(f"{name} {version}" for name, version in sorted(versions.items()))
            lines.append(f"- Dependencies: `{pinned}`")

    params = report.get("params", {})
    columns = report.get("columns", [])
    if isinstance(params, dict) and isinstance(columns, list):
        mu = params.get("mu", [])
        sigma = params.get("sigma", [])
        lines.extend(
            [
                "",
                "## Estimates",
                "",
                "| Angle | μ̂ | σ̂ |",
                "|---|---:|---:|",
            ]
        )
        for k, name in enumerate(columns):
            try:
                scale = float(sigma[k][k]) ** 0.5
                lines.append(f"| {name} | {float(mu[k]):.4f} | {scale:.4f} |")
            except (IndexError, TypeError, ValueError):
                continue

    return "\n".join(lines)


def render_simulation_markdown(payload: Mapping[str, Any]) -> str:
    scenario = payload.get("scenario", {})
    lines = ["# Monte Carlo Summary", ""]
    if isinstance(scenario, dict):
        lines.extend(
            [
                f"- n: `{scenario.get('n')}`, p: `{scenario.get('p')}`",
                f"- sigma: `{scenario.get('sigma')}`",
                f"- eps: `{scenario.get('eps')}`, k_eps: `{scenario.get('k_eps')}`",
                f"- Trials: `{payload.get('trials_total', 0)}`",
                f"- Failures: `{payload.get('failures', 0)}`",
            ]
        )

    lines.extend(
        [
            "",
            "## Medians",
            "",
            "| Estimator | h | √AS | Δ(Σ̂) | Swamping | Power | Mean Weight | Failures |",
            "|---|---:|---:|---:|---:|---:|---:|---:|",
        ]
    )
    bandwidths = payload.get("bandwidths", {})
    summary = payload.get("summary", {})
    if isinstance(summary, dict):
        for kind, entry in summary.items():
            if not isinstance(entry, dict):
                continue
            h = bandwidths.get(kind) if isinstance(bandwidths, dict) else None
            cells = [_median(entry, metric) for metric in _MARKDOWN_METRICS]
            h_str = "n/a" if h is None else f"{float(h):.4g}"
            lines.append(
                f"| {kind} | {h_str} | " + " | ".join(cells) + f" | {entry.get('failures', 0)} |"
            )

    return "\n".join(lines)


def _median(entry: Mapping[str, Any], metric: str) -> str:
    stats = entry.get(metric)
    if not isinstance(stats, dict) or stats.get("median") is None:
        return "n/a"
    return f"{float(stats['median']):.4f}"


def render_monitor_svg(result: MonitoringResult, *, max_lines: int | None = None) -> str:
    """Weight trajectories against h as SVG polylines, log-scaled h axis."""
    ok = [j for j, error in enumerate(result.errors) if error is None]
    h_values = [float(result.h_grid[j]) for j in ok]
    width = _SVG_WIDTH - 2 * _SVG_MARGIN
    height = _SVG_HEIGHT - 2 * _SVG_MARGIN
    low = math.log(min(h_values)) if h_values else 0.0
    high = math.log(max(h_values)) if h_values else 1.0
    span = high - low if high > low else 1.0

    def sx(h: float) -> float:
        return _SVG_MARGIN + width * (math.log(h) - low) / span

    def sy(w: float) -> float:
        return _SVG_MARGIN + height * (1.0 - w)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_WIDTH}" '
        f'height="{_SVG_HEIGHT}" viewBox="0 0 {_SVG_WIDTH} {_SVG_HEIGHT}">',
        f"<title>{escape(f'Monitoring weights ({result.kind})')}</title>",
        f'<rect x="{_SVG_MARGIN}" y="{_SVG_MARGIN}" width="{width}" height="{height}" '
        'fill="none" stroke="#444"/>',
    ]
    n_rows = result.weights.shape[0]
    limit = n_rows if max_lines is None else min(n_rows, max_lines)
    for i in range(limit):
        points = " ".join(
            f"{sx(h):.2f},{sy(float(result.weights[i, j])):.2f}"
            for h, j in zip(h_values, ok, strict=True)
        )
        if points:
            parts.append(
                f'<polyline points="{points}" fill="none" stroke="#1f77b4" '
                'stroke-opacity="0.35" stroke-width="1"/>'
            )
    if result.selected_h is not None and h_values:
        x = sx(result.selected_h)
        parts.append(
            f'<line x1="{x:.2f}" y1="{_SVG_MARGIN}" x2="{x:.2f}" '
            f'y2="{_SVG_MARGIN + height}" stroke="#d62728" stroke-dasharray="4 3"/>'
        )
    for value in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{_SVG_MARGIN - 8}" y="{sy(value) + 4:.2f}" font-size="11" '
            f'text-anchor="end">{value:g}</text>'
        )
    if h_values:
        for h in (h_values[0], h_values[-1]):
            parts.append(
                f'<text x="{sx(h):.2f}" y="{_SVG_MARGIN + height + 16}" font-size="11" '
                f'text-anchor="middle">{h:.3g}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path: str | Path, text: str) -> None:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text, encoding="utf-8")
