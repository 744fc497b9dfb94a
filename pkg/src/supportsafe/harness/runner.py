"""Cell execution and aggregation shared by the experiment drivers."""

from concurrent.futures import ProcessPoolExecutor
import os

from ..errors import SupportSafeError
from ..io import write_csv
from ..metrics import mean_sem


def run_cells(fn, cells, workers=1):
    """Apply ``fn`` to every cell; results come back in cell order regardless of scheduling."""
    cells = list(cells)
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells, chunksize=max(1, len(cells) // (4 * workers))))


def guarded(fn, cell, metric_names):
    """Run one cell; library errors become a status code with NA metrics instead of aborting the sweep."""
    try:
        out = fn(cell)
        out.setdefault("status", "ok")
        return out
    except SupportSafeError as exc:
        row = {k: None for k in metric_names}
        row["status"] = exc.code
        return row


def summarize(rows, keys, metrics):
    """mean and SEM per (keys) group over every row, NA-aware; n counts the rows in the group."""
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for gk in sorted(groups, key=lambda t: tuple(str(x) for x in t)):
        grp = groups[gk]
        for m in metrics:
            vals = [float("nan") if r.get(m) is None else float(r[m]) for r in grp]
            mu, se = mean_sem(vals)
            out.append(list(gk) + [m, mu, se, len(grp)])
    return out


def emit(out_dir, name, header, rows):
    path = os.path.join(out_dir, name)
    write_csv(path, header, rows)
    return path
