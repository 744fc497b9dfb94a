"""Energy-bound diagnostics on linear port-Hamiltonian systems and the hybrid benchmarks."""

import numpy as np

from ..certificates import CERT_HEADER, LinearPH, energy_drift_diagnostic
from ..errors import SupportSafeError
from ..systems import SYSTEM_NAMES, make_system, simulate_random
from .config import write_effective
from .runner import emit, run_cells
from .seeds import cell_rng

HEADER = CERT_HEADER + ["status"]

LINEAR = {
    "linear_a": dict(d=2, r=0.5, q=(1.0, 2.0), sigma=0.3, coupling=1.0),
    "linear_b": dict(d=3, r=1.0, q=(1.0, 3.0, 2.0), sigma=0.5, coupling=0.5),
    "linear_c": dict(d=2, r=0.3, q=(2.0, 2.0), sigma=0.2, coupling=0.0),
}


def linear_system(name):
    return LinearPH.make(name=name, **LINEAR[name])


def certify_task(cfg, task):
    root = int(cfg["root_seed"])
    rng = cell_rng(root, "certify", task, "gronwall", 0, 0)
    if task in LINEAR:
        spec = linear_system(task)
        batch = spec.simulate(np.zeros((int(cfg["rollouts"]), spec.state_dim)), int(cfg["steps"]), float(cfg["dt"]), rng)
    elif task in SYSTEM_NAMES:
        spec = make_system(task)
        batch = simulate_random(spec, int(cfg["hybrid_rollouts"]), int(cfg["hybrid_steps"]), rng)
    else:
        raise ValueError(f"unknown certify task {task!r}")
    try:
        r = energy_drift_diagnostic(batch, spec, strict=False)
    except SupportSafeError as exc:
        return [task, None, None, float(batch[0].times[-1]), None, None, None, exc.code]
    return [task, r["alpha"], r["C_E"], r["T"], r["bound_T"], r["empirical_U"], bool(r["pass"]), "ok"]


def _cell(args):
    return certify_task(*args)


def run_certify(cfg, workers=1, write=True):
    rows = run_cells(_cell, [(cfg, t) for t in cfg["tasks"]], workers)
    rows.sort(key=lambda r: r[0])
    if write:
        write_effective(cfg)
        emit(cfg["out"], "certificates.csv", HEADER, rows)
    return rows
