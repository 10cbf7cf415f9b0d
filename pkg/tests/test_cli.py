from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import pytest
import yaml

from wrapfit.cli import main


def _read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def _write_config(path: Path, payload: dict[str, object]) -> Path:
    path.write_text(yaml.safe_dump(payload, sort_keys=False), encoding="utf-8")
    return path


def test_cli_ingest_exports_radians(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    source = tmp_path / "angles.csv"
    source.write_text("phi,psi\n-90,180\n10,20\n", encoding="utf-8")
    out = tmp_path / "radians.csv"
    rc = main(["ingest", str(source), "--degrees", "--output", str(out)])
    assert rc == 0
    assert "n=2 p=2 columns=phi,psi" in capsys.readouterr().out
    rows = _read_csv(out)
    assert float(rows[0]["phi"]) == pytest.approx(4.71238898038469)


def test_cli_ingest_reports_bad_rows(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    source = tmp_path / "bad.csv"
    source.write_text("phi,psi\n1,2\n3\n", encoding="utf-8")
    assert main(["ingest", str(source)]) == 2
    assert "error: line 3:" in capsys.readouterr().err


def test_cli_fit_writes_report(tmp_path: Path, fixture_8tim: Path) -> None:
    config = _write_config(
        tmp_path / "run.yaml",
        {
            "seed": 3,
            "data": {"path": str(fixture_8tim), "unit": "degrees"},
            "fit": {"estimator": "wcem-unwrap", "n_subsamples": 3, "J": "auto"},
            "output": {"directory": str(tmp_path / "out")},
        },
    )
    rc = main(["fit", "--config", str(config), "--markdown", "--ellipses"])
    assert rc == 0

    out = tmp_path / "out"
    report = json.loads((out / "fit_report.json").read_text(encoding="utf-8"))
    assert report["estimator"] == "wcem-unwrap"
    assert report["columns"] == ["phi", "psi"]
    assert report["n"] == 490
    assert 0.0 < report["mean_weight"] < 1.0
    assert report["provenance"]["data"]["sha256"]
    assert report["provenance"]["config_digest"]

    rows = _read_csv(out / "observations.csv")
    assert len(rows) == 490
    assert set(rows[0]) >= {"observation", "phi", "weight", "d2", "flagged", "x_phi", "j_psi"}
    assert rows[0]["flagged"] in {"true", "false"}
    assert len(_read_csv(out / "ellipses.csv")) == 181
    assert (out / "fit_report.md").read_text(encoding="utf-8").startswith("# Fit Report")


def test_cli_fit_writes_signed_angles(tmp_path: Path, fixture_8tim: Path) -> None:
    payload: dict[str, object] = {
        "seed": 3,
        "data": {"path": str(fixture_8tim), "unit": "degrees", "signed": True},
        "fit": {"estimator": "em", "n_subsamples": 2},
        "output": {"directory": str(tmp_path / "signed")},
    }
    assert main(["fit", "--config", str(_write_config(tmp_path / "a.yaml", payload))]) == 0
    rows = _read_csv(tmp_path / "signed" / "observations.csv")
    from_config = [float(row["phi"]) for row in rows]
    assert min(from_config) < 0.0
    assert all(-math.pi <= value < math.pi for value in from_config)

    payload["data"] = {"path": str(fixture_8tim), "unit": "degrees"}
    payload["output"] = {"directory": str(tmp_path / "flag")}
    config = _write_config(tmp_path / "b.yaml", payload)
    assert main(["fit", "--config", str(config), "--signed"]) == 0
    rows = _read_csv(tmp_path / "flag" / "observations.csv")
    from_flag = [float(row["phi"]) for row in rows]
    assert from_flag == from_config


def test_cli_fit_requires_data(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    rc = main(["fit", "--output-dir", str(tmp_path)])
    assert rc == 2
    assert "no data file" in capsys.readouterr().err


def test_cli_simulate_writes_trials(tmp_path: Path) -> None:
    config = _write_config(
        tmp_path / "sim.yaml",
        {
            "seed": 5,
            "fit": {"n_subsamples": 2, "max_iter": 100},
            "scenario": {
                "n": 80,
                "eps": 0.1,
                "n_trials": 2,
                "kinds": ["em", "wcem-unwrap"],
                "calibrate": False,
            },
            "output": {"directory": str(tmp_path / "sim"), "markdown": True},
        },
    )
    assert main(["simulate", "--config", str(config)]) == 0
    out = tmp_path / "sim"
    rows = _read_csv(out / "trials.csv")
    assert [(row["trial"], row["kind"]) for row in rows] == [
        ("0", "em"),
        ("0", "wcem-unwrap"),
        ("1", "em"),
        ("1", "wcem-unwrap"),
    ]
    assert "elapsed" not in rows[0]
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["trials_total"] == 2
    assert set(summary["summary"]) == {"em", "wcem-unwrap"}
    assert summary["provenance"]["command"] == "simulate"
    assert "| wcem-unwrap |" in (out / "summary.md").read_text(encoding="utf-8")


def test_cli_simulate_is_reproducible(tmp_path: Path) -> None:
    config = _write_config(
        tmp_path / "sim.yaml",
        {
            "fit": {"n_subsamples": 2, "max_iter": 100},
            "scenario": {"n": 60, "eps": 0.1, "n_trials": 2, "kinds": ["em"], "calibrate": False},
        },
    )
    for name in ("a", "b"):
        args = ["--seed", "11", "simulate", "--config", str(config)]
        assert main([*args, "--output-dir", str(tmp_path / name)]) == 0
    first = (tmp_path / "a" / "trials.csv").read_text(encoding="utf-8")
    assert first == (tmp_path / "b" / "trials.csv").read_text(encoding="utf-8")


def test_cli_simulate_calibrates_robust_bandwidths(tmp_path: Path) -> None:
    config = _write_config(
        tmp_path / "sim.yaml",
        {
            "seed": 3,
            "fit": {"n_subsamples": 2, "max_iter": 100},
            "scenario": {
                "n": 80,
                "eps": 0.1,
                "n_trials": 1,
                "kinds": ["em", "wcem-unwrap"],
                "pilot_trials": 1,
            },
            "monitor": {"grid": [0.1, 0.4]},
        },
    )
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(config), "--output-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert set(summary["calibration"]) == {"wcem-unwrap"}
    assert summary["calibration"]["wcem-unwrap"]["h"] in (0.1, 0.4)
    assert summary["bandwidths"]["wcem-unwrap"] == summary["calibration"]["wcem-unwrap"]["h"]

    skipped = tmp_path / "skipped"
    args = ["simulate", "--config", str(config), "--no-calibrate", "--output-dir", str(skipped)]
    assert main(args) == 0
    summary = json.loads((skipped / "summary.json").read_text(encoding="utf-8"))
    assert summary["calibration"] == {}
    assert summary["bandwidths"]["wcem-unwrap"] == pytest.approx(0.2)


def test_cli_monitor_writes_curves(tmp_path: Path, fixture_8tim: Path) -> None:
    rc = main(
        [
            "monitor",
            "--data",
            str(fixture_8tim),
            "--degrees",
            "--grid",
            "0.1,0.2,0.4",
            "--selected-h",
            "0.2",
            "--svg",
            "--output-dir",
            str(tmp_path),
        ]
    )
    assert rc == 0
    curve = _read_csv(tmp_path / "monitor_curve.csv")
    assert [float(row["h"]) for row in curve] == pytest.approx([0.1, 0.2, 0.4])
    assert len(_read_csv(tmp_path / "monitor_weights.csv")) <= 3 * 490
    svg = (tmp_path / "monitor.svg").read_text(encoding="utf-8")
    assert svg.startswith("<svg") and "stroke-dasharray" in svg


def test_cli_monitor_rejects_empty_grid(tmp_path: Path) -> None:
    with pytest.raises(SystemExit):
        main(["monitor", "--data", str(tmp_path / "x.csv"), "--grid", ","])


def test_cli_flat_torus(tmp_path: Path) -> None:
    source = tmp_path / "angles.csv"
    source.write_text("a,b\n0.1,0.2\n3.0,6.0\n", encoding="utf-8")
    out = tmp_path / "flat.csv"
    assert main(["flat-torus", str(source), "--J", "1", "--output", str(out)]) == 0
    rows = _read_csv(out)
    assert len(rows) == 18
    assert list(rows[0]) == ["observation", "j_a", "j_b", "a", "b"]


def test_cli_influence_and_sigma_curve(tmp_path: Path) -> None:
    influence = tmp_path / "influence.csv"
    rc = main(
        ["influence", "--kinds", "wem", "--points", "9", "--output", str(influence)]
    )
    assert rc == 0
    rows = _read_csv(influence)
    assert len(rows) == 9
    assert list(rows[0]) == ["z", "wem", "wem_mle"]

    curve = tmp_path / "sigma.csv"
    assert main(["sigma-curve", "--points", "4", "--output", str(curve)]) == 0
    values = _read_csv(curve)
    assert len(values) == 4
    assert float(values[-1]["sigma_unwrapped"]) == pytest.approx(1.460, abs=1e-3)


def test_cli_init_refuses_overwrite(tmp_path: Path) -> None:
    target = tmp_path / "project"
    assert main(["--seed", "4", "init", str(target)]) == 0
    config = yaml.safe_load((target / "wrapfit.yaml").read_text(encoding="utf-8"))
    assert config["seed"] == 4
    assert len(_read_csv(target / "angles.csv")) == 200
    assert main(["init", str(target)]) == 2
    assert main(["init", str(target), "--force"]) == 0


def test_cli_schema_json(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["schema", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["fit"]["estimator"] == "wcem-unwrap"
