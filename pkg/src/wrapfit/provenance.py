from __future__ import annotations

import hashlib
import importlib.metadata
import json
import platform
import subprocess
from collections.abc import Mapping
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

_DEPENDENCIES = ["wrapfit", "numpy", "scipy", "pyyaml"]


def collect_provenance(
    *,
    command: str,
    seed: int | None = None,
    data_path: str | Path | None = None,
    config: Mapping[str, Any] | None = None,
    cwd: str | Path | None = None,
) -> dict[str, Any]:
    """Enough context to rerun a fit or simulation and get the same numbers."""
    base_dir = Path(cwd) if cwd is not None else Path.cwd()
    data_file = None if data_path is None else Path(data_path)

    return {
        "captured_at": datetime.now(UTC).isoformat(),
        "command": command,
        "seed": seed,
        "data": _data_info(data_file),
        "config_digest": None if config is None else config_digest(config),
        "python_version": platform.python_version(),
        "git_commit": _git_commit(base_dir),
        "dependencies": _dependency_versions(_DEPENDENCIES),
    }


def config_digest(config: Mapping[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _data_info(path: Path | None) -> dict[str, Any] | None:
    if path is None:
        return None
    info: dict[str, Any] = {"path": str(path)}
    if path.is_file():
        info["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    return info


def _git_commit(cwd: Path) -> str | None:
    try:
        completed = subprocess.run(
            ["git", "rev-parse", "HEAD"], check=False, cwd=str(cwd), capture_output=True, text=True
        )
    except OSError:
        return None
    if completed.returncode != 0:
        return None
    return completed.stdout.strip()


def _dependency_versions(names: list[str]) -> dict[str, str]:
    versions: dict[str, str] = {}
    for package_name in names:
        try:
            versions[package_name] = importlib.metadata.version(package_name)
        except importlib.metadata.PackageNotFoundError:
            versions[package_name] = "not-installed"
    return versions
