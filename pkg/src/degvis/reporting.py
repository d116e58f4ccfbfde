"""CSV/JSON persistence for runs, campaigns and verdict sheets."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .diagnostics import active_potential, record_columns, record_from_row, record_to_row
from .grid import SimState
from .solver import RunReport

RUN_JSON = "run.json"
DIAGNOSTICS_CSV = "diagnostics.csv"
SUMMARY_JSON = "campaign_summary.json"
VERDICTS_JSON = "verdicts.json"
VERDICTS_TXT = "verdicts.txt"


def fmt(v):
    """Shortest round-tripping text for a float (``nan``/``inf`` spelled out)."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else fmt(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, payload):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_rows(path, header, rows):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    return path


def write_state_csv(path, model, eps, state: SimState):
    w = active_potential(model, eps, state)
    return write_rows(path, ["x", "rho", "u", "w"],
                      zip(state.grid.x, state.rho, state.u, w))


def write_diagnostics_csv(path, records):
    return write_rows(path, record_columns(), (record_to_row(r) for r in records))


def read_diagnostics_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != record_columns():
            raise ValueError(f"{path}: unexpected diagnostics columns")
        return [record_from_row(row) for row in reader]


def snapshot_name(index, t):
    return f"snapshot_{index:04d}_t{t:.6f}.csv"


def write_run(run_dir, model, report: RunReport):
    """Persist one run: diagnostics CSV, per-snapshot state CSVs and run metadata."""
    run_dir = Path(run_dir)
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    eps = report.eps
    write_diagnostics_csv(run_dir / DIAGNOSTICS_CSV, report.records)
    for i, s in enumerate(report.snapshots):
        write_state_csv(snap_dir / snapshot_name(i, s.t), model, eps, s)
    if report.failure_state is not None:
        write_state_csv(run_dir / "failure_state.csv", model, eps, report.failure_state)
    meta = {
        "model": report.model,
        "config": report.config,
        "grid": report.grid,
        "initial": report.initial,
        "status": report.status,
        "message": report.message,
        "steps": report.steps,
        "snapshot_times": report.times,
        "timing": {"wall_seconds": report.wall_time},
    }
    write_json(run_dir / RUN_JSON, meta)
    return run_dir


def load_run(run_dir) -> RunReport:
    run_dir = Path(run_dir)
    meta = read_json(run_dir / RUN_JSON)
    records = read_diagnostics_csv(run_dir / DIAGNOSTICS_CSV)
    return RunReport(
        model=meta["model"], config=meta["config"], grid=meta["grid"],
        status=meta["status"], message=meta.get("message", ""), records=records,
        steps=meta.get("steps", 0), wall_time=meta.get("timing", {}).get("wall_seconds", 0.0),
        initial=meta.get("initial", {}),
    )


TABLE_COLUMNS = ("bound", "theoretical", "observed", "margin", "status")


def verdict_table(sheet):
    """Fixed-width text table with columns bound, theoretical, observed, margin, status."""
    rows = [TABLE_COLUMNS]
    for v in sheet.entries:
        rows.append((v.label, _num(v.theoretical), _num(v.observed), _num(v.margin), v.status))
    widths = [max(len(r[i]) for r in rows) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _num(v):
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{v:.6g}"
