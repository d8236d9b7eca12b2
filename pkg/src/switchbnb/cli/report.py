"""Result rows, control dumps, event logs and summary tables."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from pathlib import Path

from ..timegrid import PiecewiseConstantFn

STAT_COLUMNS = ["Subs", "Cuts", "ADMM", "FixPoints", "FixIndices", "Obj", "Time", "Refine", "Ratio"]
RESULT_COLUMNS = ["theta", "constraint", "seed", "status"] + STAT_COLUMNS + ["Gap", "Certified", "error"]
SUMMARY_COLUMNS = ["Subs", "Cuts", "Time", "Refine", "Ratio"]


def write_rows(path, rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, RESULT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def read_rows(path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_control(path, u: PiecewiseConstantFn) -> None:
    """Two columns: each cell's left node with the cell value, then ``T`` with the last value."""
    g = u.grid
    lines = [f"{float(t)!r} {float(v)!r}" for t, v in zip(g.nodes[:-1], u.values)]
    lines.append(f"{float(g.nodes[-1])!r} {float(u.values[-1])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_control(path) -> PiecewiseConstantFn:
    from ..timegrid import TemporalGrid
    import numpy as np

    data = np.loadtxt(path, ndmin=2)
    return PiecewiseConstantFn(TemporalGrid(data[:, 0]), data[:-1, 1])


def write_events(path, events: list) -> None:
    with open(path, "w") as f:
        for ev in events:
            f.write(json.dumps(ev, allow_nan=True) + "\n")


def _num(x):
    try:
        v = float(x)
    except (TypeError, ValueError):
        return math.nan
    return v


def summarize(rows: list) -> list:
    """Averages of the summary columns per (theta, constraint) over successful runs."""
    groups = defaultdict(list)
    for r in rows:
        if r.get("status", "ok") == "ok":
            groups[(r["theta"], r["constraint"])].append(r)
    out = []
    for (theta, cons), rs in sorted(groups.items(), key=lambda kv: (int(kv[0][0]), kv[0][1])):
        row = {"theta": theta, "constraint": cons, "runs": len(rs)}
        for c in SUMMARY_COLUMNS:
            row[c] = sum(_num(r[c]) for r in rs) / len(rs)
        out.append(row)
    return out


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def markdown(rows: list, columns: list) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r.get(c, "")) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def render(rows: list, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, RESULT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        return markdown(rows, RESULT_COLUMNS)
    if fmt == "summary":
        return markdown(summarize(rows), ["theta", "constraint", "runs"] + SUMMARY_COLUMNS)
    raise ValueError(f"unknown format {fmt!r}")
