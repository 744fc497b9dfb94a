"""Long-format plot data: ``experiment,task,method,condition,seed,metric,value``."""

import csv
import math

from ..io import fmt, render_csv, write_csv

HEADER = ["experiment", "task", "method", "condition", "seed", "metric", "value"]


def long_rows(experiment, header, rows, id_cols, condition_col=None):
    """Melt wide result rows into long rows; NA metrics are kept as empty values."""
    idx = {h: i for i, h in enumerate(header)}
    task_col, method_col, seed_col = id_cols
    skip = {task_col, method_col, seed_col, "status"} | ({condition_col} if condition_col else set())
    metrics = [h for h in header if h not in skip]
    out = []
    for r in rows:
        cond = r[idx[condition_col]] if condition_col else ""
        for m in metrics:
            out.append([experiment, r[idx[task_col]], r[idx[method_col]], cond, r[idx[seed_col]], m, r[idx[m]]])
    return out


def _key(row):
    return tuple(fmt(v) for v in row[:6])


def emit_plotdata(path, rows):
    """Write rows sorted on their identifying columns; an empty input yields a header-only file."""
    rows = sorted(rows, key=_key)
    return write_csv(path, HEADER, rows)


def render_plotdata(rows):
    return render_csv(HEADER, sorted(rows, key=_key))


def _num(s):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_plotdata(text):
    """Inverse of ``render_plotdata`` (values come back as int, float, str or None)."""
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header != HEADER:
        raise ValueError(f"unexpected plot-data header {header}")
    out = []
    for r in reader:
        exp, task, method, cond, seed, metric, value = r
        out.append([exp, task, method, _num(cond) if cond else "", int(seed), metric, _num(value)])
    return out


def read_plotdata(path):
    with open(path, newline="") as fh:
        return parse_plotdata(fh.read())
