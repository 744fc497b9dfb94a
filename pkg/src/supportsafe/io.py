"""CSV writers with deterministic formatting.

Floats are written with their shortest round-trip ``repr``; ``None`` and NaN
become empty cells (NA).
"""

import csv
import io
import math
from pathlib import Path

import numpy as np


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return ""
        return repr(v)
    return str(value)


def render_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_csv(header, rows))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def trajectory_rows(traj):
    """Header and rows for a trajectory (modes written 1-based)."""
    d = traj.states.shape[1]
    q = traj.actions.shape[1]
    header = (["t", "s"] + [f"z_{i + 1}" for i in range(d)] + [f"a_{i + 1}" for i in range(q)]
              + [f"zdot_{i + 1}" for i in range(d)])
    rows = [
        [traj.times[k], int(traj.modes[k]) + 1, *traj.states[k], *traj.actions[k], *traj.derivatives[k]]
        for k in range(len(traj))
    ]
    return header, rows


def observation_rows(obs):
    r = obs.values.shape[1]
    header = ["t", "observed"] + [f"o_{i + 1}" for i in range(r)]
    seen = obs.observed
    rows = [[obs.times[k], bool(seen[k]), *obs.values[k]] for k in range(len(obs))]
    return header, rows
