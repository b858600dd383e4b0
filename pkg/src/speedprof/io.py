"""File formats and configuration for the command-line toolkit.

Wire formats are deliberately plain: traces are CSV files with a fixed
``t,x,v`` header (optional ``pass_id`` column for multi-pass files), curves
exchanged between stages are two-column ``x,v`` CSV on a fixed grid,
structured reports are JSON with sorted keys, and configuration is a flat
``key=value`` file.  All writes are atomic (temp file in the target
directory, then rename), and floats round-trip exactly via ``repr``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, fields, replace

import numpy as np

from ._validation import as_float_1d, check_same_length, check_strictly_increasing
from .smoothing import ObservationSet, fill_missing_channel

__all__ = [
    "PipelineConfig",
    "atomic_write_text",
    "emit_traces",
    "ingest",
    "read_curve",
    "read_curves_dir",
    "write_curve",
    "write_json",
]

TRACE_FIELDS = ("t", "x", "v")


def atomic_write_text(path: str, text: str) -> None:
    """Write text so that readers never observe a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, payload) -> None:
    """Deterministic JSON report: sorted keys, stable layout."""
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_float(token: str, line_no: int, column: str) -> float:
    token = token.strip()
    if token == "" or token.lower() in ("nan", "na"):
        return float("nan")
    try:
        return float(token)
    except ValueError:
        raise ValueError(f"line {line_no}: column '{column}' has non-numeric value {token!r}") from None


def ingest(path: str) -> list[ObservationSet]:
    """Read a trace file into one ObservationSet per pass.

    The header must start with ``t,x,v``; a fourth ``pass_id`` column splits
    the file into passes (kept in order of first appearance).  Missing x or
    v entries are filled by interpolation with inflated variance; malformed
    rows report their line number, monotonicity problems name the pass.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty trace file") from None
        header = [h.strip() for h in header]
        if tuple(header[:3]) != TRACE_FIELDS or len(header) > 4 or (
            len(header) == 4 and header[3] != "pass_id"
        ):
            raise ValueError(
                f"{path}: header must be 't,x,v' with an optional trailing 'pass_id', got {header}"
            )
        has_pass = len(header) == 4

        order: list[str] = []
        rows: dict[str, list[tuple[float, float, float]]] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"line {line_no}: expected {len(header)} columns, got {len(row)}"
                )
            t = _parse_float(row[0], line_no, "t")
            if math.isnan(t):
                raise ValueError(f"line {line_no}: column 't' must not be missing")
            x = _parse_float(row[1], line_no, "x")
            v = _parse_float(row[2], line_no, "v")
            pid = row[3].strip() if has_pass else "0"
            if pid not in rows:
                rows[pid] = []
                order.append(pid)
            rows[pid].append((t, x, v))

    sets = []
    for pid in order:
        data = np.asarray(rows[pid], dtype=float)
        times, positions, speeds = data[:, 0], data[:, 1], data[:, 2]
        try:
            check_strictly_increasing(times, "t")
        except ValueError as exc:
            raise ValueError(f"pass {pid!r}: {exc}") from None
        try:
            sets.append(fill_missing_channel(times, positions, speeds))
        except ValueError as exc:
            raise ValueError(f"pass {pid!r}: {exc}") from None
    if not sets:
        raise ValueError(f"{path}: no data rows")
    return sets


def emit_traces(path: str, sets: list[ObservationSet]) -> None:
    """Write observation sets as a trace file; inverse of :func:`ingest`.

    Values are written with ``repr`` so numerics survive the round trip
    bit for bit.  Multiple sets get a ``pass_id`` column numbered from 0.
    """
    if not sets:
        raise ValueError("emit_traces needs at least one observation set")
    multi = len(sets) > 1
    lines = ["t,x,v,pass_id" if multi else "t,x,v"]
    for pid, data in enumerate(sets):
        for t, x, v in zip(data.times, data.positions, data.speeds):
            row = f"{float(t)!r},{float(x)!r},{float(v)!r}"
            lines.append(f"{row},{pid}" if multi else row)
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_curve(path: str, x, v) -> None:
    """Two-column curve CSV used between pipeline stages."""
    x = as_float_1d(x, "x")
    v = as_float_1d(v, "v")
    check_same_length(x=x, v=v)
    lines = ["x,v"] + [f"{float(xi)!r},{float(vi)!r}" for xi, vi in zip(x, v)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_curve(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = [h.strip() for h in next(reader, [])]
        if header != ["x", "v"]:
            raise ValueError(f"{path}: curve header must be 'x,v', got {header}")
        pairs = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: line {line_no}: expected 2 columns")
            pairs.append(
                (
                    _parse_float(row[0], line_no, "x"),
                    _parse_float(row[1], line_no, "v"),
                )
            )
    if not pairs:
        raise ValueError(f"{path}: no data rows")
    arr = np.asarray(pairs, dtype=float)
    x, v = arr[:, 0], arr[:, 1]
    check_strictly_increasing(x, "x")
    return x, v


def read_curves_dir(directory: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """All '*.csv' curves in a directory, sorted by filename.

    The summary file ``mean_curve.csv`` written by the register subcommand
    is skipped so a register output directory can be fed straight to the
    boxplot subcommand without the mean masquerading as an observation.
    """
    names = sorted(
        n for n in os.listdir(directory)
        if n.endswith(".csv") and n != "mean_curve.csv"
    )
    if not names:
        raise ValueError(f"{directory}: no .csv curve files found")
    out = []
    for name in names:
        x, v = read_curve(os.path.join(directory, name))
        out.append((name, x, v))
    return out


@dataclass(frozen=True)
class PipelineConfig:
    """Flat configuration shared by the CLI subcommands.

    Serialized as ``key=value`` lines; unknown keys are rejected so typos
    cannot silently fall back to defaults.
    """

    order: int = 3
    criterion: str = "gml"
    lambda_min: float = 1e-8
    lambda_max: float = 1e4
    lam: float = float("nan")  # NaN means: select automatically
    lam_mono: float = 1e-4
    trim: float = 0.1
    eps_stop: float = 0.1
    n_landmarks: int = -1  # -1 means: use the per-curve stop count
    group_gap: float = 20.0
    warp_window: float = 100.0
    min_secant: float = 0.35
    boxplot_fractions: str = "0.25,0.5,0.75"
    grid_step: float = 1.0
    station_step: float = 10.0
    seed: int = 0
    n_runs: int = 100
    sigma_x: float = 0.2
    sigma_v: float = 0.01
    out_dir: str = "."

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("order must be at least 2")
        if self.criterion not in ("gcv", "gml"):
            raise ValueError("criterion must be 'gcv' or 'gml'")
        if not 0 < self.lambda_min < self.lambda_max:
            raise ValueError("lambda range must satisfy 0 < lambda_min < lambda_max")
        if not 0 <= self.trim < 0.5:
            raise ValueError("trim must lie in [0, 0.5)")
        for name in ("eps_stop", "lam_mono", "group_gap", "warp_window", "grid_step", "station_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.min_secant < 1:
            raise ValueError("min_secant must lie in (0, 1)")
        if self.n_runs < 1:
            raise ValueError("n_runs must be positive")
        self.fractions()  # validate eagerly

    def fractions(self) -> tuple[float, ...]:
        out = tuple(float(tok) for tok in self.boxplot_fractions.split(","))
        if any(not 0 < p <= 1 for p in out) or 0.5 not in out:
            raise ValueError("boxplot_fractions must lie in (0, 1] and include 0.5")
        return out

    @classmethod
    def load(cls, path: str) -> "PipelineConfig":
        values = {}
        types = {f.name: type(getattr(cls, f.name)) for f in fields(cls)}
        with open(path) as handle:
            for line_no, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}: line {line_no}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip()
                value = value.strip()
                if key not in types:
                    raise ValueError(f"{path}: line {line_no}: unknown key {key!r}")
                caster = types[key]
                try:
                    values[key] = caster(value)
                except ValueError:
                    raise ValueError(
                        f"{path}: line {line_no}: cannot parse {value!r} for {key}"
                    ) from None
        return cls(**values)

    def with_overrides(self, **overrides) -> "PipelineConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **clean) if clean else self

    def dump(self) -> str:
        parts = []
        for f in fields(self):
            value = getattr(self, f.name)
            parts.append(f"{f.name}={value}")
        return "\n".join(parts) + "\n"
