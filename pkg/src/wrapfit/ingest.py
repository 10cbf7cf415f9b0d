from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from wrapfit.errors import DomainError, IngestError
from wrapfit.torus import FloatArray, to_signed, wrap

logger = logging.getLogger(__name__)

AngleUnit = Literal["radians", "degrees"]
SUPPORTED_UNITS = ("radians", "degrees")


@dataclass(slots=True)
class AngleTable:
    columns: list[str]
    values: FloatArray
    unit: AngleUnit = "radians"

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise DomainError(
                f"table has {len(self.columns)} columns but values of shape {self.values.shape}"
            )

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def p(self) -> int:
        return int(self.values.shape[1])


def _check_unit(unit: str) -> AngleUnit:
    if unit not in SUPPORTED_UNITS:
        allowed = ", ".join(SUPPORTED_UNITS)
        raise DomainError(f"Unsupported unit '{unit}'. Allowed: {allowed}")
    return unit  # type: ignore[return-value]


def _delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def ingest(path: str | Path, unit: AngleUnit = "radians") -> AngleTable:
    """Read a delimited angle table into radians wrapped to [0, 2π)."""
    resolved = _check_unit(unit)
    file_path = Path(path)
    lines = file_path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].strip():
        raise IngestError("file is empty or has no header row", line=1)

    delimiter = _delimiter(lines[0])
    reader = csv.reader(lines, delimiter=delimiter)
    header = [name.strip() for name in next(reader)]
    if any(not name for name in header):
        raise IngestError("header contains an empty column name", line=1)

    rows: list[list[float]] = []
    for line_number, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise IngestError(
                f"expected {len(header)} fields, found {len(row)}", line=line_number
            )
        parsed: list[float] = []
        for column, cell in zip(header, row, strict=True):
            try:
                value = float(cell)
            except ValueError as exc:
                raise IngestError(
                    f"column '{column}' has non-numeric value {cell.strip()!r}",
                    line=line_number,
                ) from exc
            if not math.isfinite(value):
                raise IngestError(
                    f"column '{column}' has non-finite value {cell.strip()!r}", line=line_number
                )
            parsed.append(value)
        rows.append(parsed)

    if not rows:
        raise IngestError("file has a header but no data rows", line=2)
    values = np.asarray(rows, dtype=float)
    if resolved == "degrees":
        values = np.deg2rad(values)
    table = AngleTable(header, wrap(values), "radians")
    logger.info("ingested %s: n=%d p=%d (%s)", file_path, table.n, table.p, resolved)
    return table


def export_table(
    table: AngleTable,
    path: str | Path,
    *,
    unit: AngleUnit = "radians",
    signed: bool = False,
) -> None:
    """Write the table back out; ``signed`` shows angles in [−π, π)."""
    resolved = _check_unit(unit)
    values = to_signed(table.values) if signed else table.values
    if resolved == "degrees":
        values = np.rad2deg(values)
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(table.columns)
        for row in values:
            writer.writerow([format(float(value), ".17g") for value in row])
