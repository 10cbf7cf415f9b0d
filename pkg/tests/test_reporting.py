from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from wrapfit.estimators import EstimatorKind
from wrapfit.monitoring import MonitoringResult
from wrapfit.reporting import (
    read_json,
    render_fit_markdown,
    render_monitor_svg,
    render_simulation_markdown,
    write_csv,
    write_json,
)


def test_write_csv_formats_cells(tmp_path: Path) -> None:
    path = tmp_path / "rows.csv"
    count = write_csv(
        path,
        ["a", "b", "c"],
        [{"a": None, "b": True, "c": 1 / 3}, {"a": 2, "b": False, "c": 1e-12}],
    )
    assert count == 2
    assert path.read_text(encoding="utf-8") == "a,b,c\n,true,0.3333333333\n2,false,1e-12\n"


def test_write_json_round_trip(tmp_path: Path) -> None:
    path = tmp_path / "nested" / "payload.json"
    write_json(path, {"b": 1, "a": [1.5]})
    text = path.read_text(encoding="utf-8")
    assert text.endswith("}\n") and text.index('"a"') < text.index('"b"')
    assert read_json(path) == {"a": [1.5], "b": 1}
    (tmp_path / "list.json").write_text("[1]", encoding="utf-8")
    with pytest.raises(ValueError, match="object"):
        read_json(tmp_path / "list.json")


def test_render_fit_markdown() -> None:
    report = {
        "estimator": "wem",
        "n": 10,
        "p": 2,
        "iterations": 7,
        "converged": True,
        "mean_weight": 0.9,
        "columns": ["phi", "psi"],
        "params": {"mu": [1.0, 2.0], "sigma": [[0.04, 0.0], [0.0, 0.09]]},
        "detection": {"alpha": 0.01, "cutoff": 9.21, "n_flagged": 1, "flagged_fraction": 0.1},
        "provenance": {},
    }
    text = render_fit_markdown(report)
    assert text.startswith("# Fit Report: wem")
    assert "- Flagged: `1` (10.0%)" in text
    assert "| psi | 2.0000 | 0.3000 |" in text
    assert "## Provenance" not in text

    report["provenance"] = {
        "seed": 4,
        "git_commit": None,
        "python_version": "3.12.1",
        "dependencies": {"scipy": "1.13.0", "numpy": "2.0.0"},
    }
    text = render_fit_markdown(report)
    assert "- Seed: `4`" in text
    assert "- Git Commit: `<none>`" in text
    assert "- Dependencies: `numpy 2.0.0, scipy 1.13.0`" in text


def test_render_simulation_markdown_handles_missing_medians() -> None:
    payload = {
        "scenario": {"n": 250, "p": 2, "sigma": 0.39, "eps": 0.2, "k_eps": 3.14},
        "trials_total": 3,
        "failures": 0,
        "bandwidths": {"em": 0.2},
        "summary": {"em": {"sqrt_as": {"median": 0.05}, "failures": 0}},
    }
    text = render_simulation_markdown(payload)
    assert "| em | 0.2 | 0.0500 | n/a | n/a | n/a | n/a | 0 |" in text


def test_render_monitor_svg_skips_failed_bandwidths() -> None:
    result = MonitoringResult(
        kind=EstimatorKind.WCEM_UNWRAP,
        h_grid=np.array([0.1, 0.2, 0.4]),
        weights=np.array([[1.0, np.nan, 0.5], [0.2, np.nan, 0.1]]),
        params=[None, None, None],
        errors=[None, "singular", None],
        selected_h=0.2,
    )
    svg = render_monitor_svg(result, max_lines=1)
    assert svg.count("<polyline") == 1
    assert "nan" not in svg
    assert "stroke-dasharray" in svg
    assert svg.rstrip().endswith("</svg>")
