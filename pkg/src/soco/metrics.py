"""Metrics CSV: one row per evaluation, fixed column order, 9 significant digits."""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import IO, Sequence

from .marl import METRIC_COLUMNS


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:#.9g}"


def metric_columns(n_views: int = 0) -> list[str]:
    """Documented columns, plus the chosen-index histogram for gated runs."""
    return list(METRIC_COLUMNS) + [f"gate_frac_{k}" for k in range(n_views)]


def write_header(stream: IO[str], columns: Sequence[str]) -> None:
    csv.writer(stream, lineterminator="\r\n").writerow(columns)


def write_metrics_row(stream: IO[str], row: dict, columns: Sequence[str]) -> None:
    csv.writer(stream, lineterminator="\r\n").writerow([format_value(row.get(c, math.nan)) for c in columns])


class MetricsWriter:
    """Streams rows to ``<path>.tmp`` and renames onto ``path`` on close."""

    def __init__(self, path: str | os.PathLike, columns: Sequence[str]):
        self.path = Path(path)
        self.tmp = self.path.with_name(self.path.name + ".tmp")
        self.columns = list(columns)
        self.stream = open(self.tmp, "w", newline="")
        write_header(self.stream, self.columns)
        self.last_step: int | None = None

    def write(self, row: dict) -> None:
        step = int(row["step"])
        if self.last_step is not None and step <= self.last_step:
            raise ValueError(f"metrics steps must strictly increase ({step} after {self.last_step})")
        self.last_step = step
        write_metrics_row(self.stream, row, self.columns)
        self.stream.flush()

    def close(self) -> None:
        self.stream.close()
        os.replace(self.tmp, self.path)

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self.stream.close()


def read_metrics(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for r in rows:
        out.append({k: (int(v) if k == "step" else float(v)) for k, v in r.items()})
    return out
