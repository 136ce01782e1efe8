"""Writers for sweep tables: CSV, schema-versioned JSON and two-column plot data."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from importlib import resources
from pathlib import Path

from .experiments import SWEEP_COLUMNS, SweepRow, max_C

SCHEMA_VERSION = "1"
DEFAULT_PAIRS = (("k", "sigma_c"), ("k", "lower_bound"), ("k", "C"), ("k", "epsilon"))
_INT_COLUMNS = {"k", "n_r"}
_STR_COLUMNS = {"verdict", "error"}


class EmitError(OSError):
    """Output could not be written; carries the offending path."""


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, c)) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def parse_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != SWEEP_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        kw = {}
        for name, cell in zip(header, rec):
            if name in _STR_COLUMNS:
                kw[name] = cell
            elif name in _INT_COLUMNS:
                kw[name] = int(cell) if cell else None
            else:
                kw[name] = float(cell)
        rows.append(SweepRow(**kw))
    return rows


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def json_document(rows: list[SweepRow], meta: dict | None = None) -> dict:
    D = max_C(rows)
    return {
        "schema_version": SCHEMA_VERSION,
        "columns": SWEEP_COLUMNS,
        "meta": meta or {},
        "max_C": _json_safe(D),
        "rows": [{k: _json_safe(v) for k, v in asdict(r).items()} for r in rows],
    }


def load_schema() -> dict:
    return json.loads(resources.files("anosovlab").joinpath("schema/sweep.schema.json").read_text())


def plot_series(rows: list[SweepRow], x: str, y: str) -> str:
    lines = [f"# {x} {y}"]
    for r in rows:
        xv, yv = getattr(r, x), getattr(r, y)
        if xv is None or yv is None or (isinstance(yv, float) and math.isnan(yv)):
            continue
        lines.append(f"{_cell(xv)} {_cell(yv)}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def emit(rows: list[SweepRow], fmt: str, out_dir, stem: str = "sweep", pairs=DEFAULT_PAIRS, meta: dict | None = None) -> list[Path]:
    """Write ``rows`` as ``fmt`` (``csv``, ``json``, ``plot`` or ``all``) under ``out_dir``."""
    out = Path(out_dir)
    if fmt == "all":
        return [p for f in ("csv", "json", "plot") for p in emit(rows, f, out, stem, pairs, meta)]
    if fmt == "csv":
        return [_write(out / f"{stem}.csv", csv_text(rows))]
    if fmt == "json":
        doc = json_document(rows, meta)
        return [_write(out / f"{stem}.json", json.dumps(doc, indent=2, allow_nan=False) + "\n")]
    if fmt == "plot":
        for x, y in pairs:
            if x not in SWEEP_COLUMNS or y not in SWEEP_COLUMNS:
                raise ValueError(f"unknown column pair ({x}, {y})")
        return [_write(out / f"{stem}_{y}_vs_{x}.dat", plot_series(rows, x, y)) for x, y in pairs]
    raise ValueError(f"unknown format {fmt!r}")
