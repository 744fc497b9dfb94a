"""Command-line entry point: ``supportsafe <command> [options]``."""

import argparse
import os
import sys

import numpy as np

from ..errors import SupportSafeError
from ..io import trajectory_rows, write_csv
from ..systems import SYSTEM_NAMES, make_system, manifest_text, simulate_random
from . import plotdata
from .config import ConfigError, load_config, resolve

U64 = 2**64


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < U64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=_positive, default=None, help="parallel worker processes")
    common.add_argument("--root-seed", type=_u64, default=None, help="root seed for every cell stream")

    p = argparse.ArgumentParser(prog="supportsafe", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="simulate one trajectory to CSV")
    sim.add_argument("--system", required=True, choices=SYSTEM_NAMES)
    sim.add_argument("--seed", type=_u64, required=True)
    sim.add_argument("--steps", type=_positive, required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--manifest", default=None, help="also write the system manifest (JSON) here")

    for name, helptext in (("sweep-occlusion", "occlusion sweep of the defensive filter"),
                           ("segment", "regime segmentation against proxy labels"),
                           ("recover", "sparse Hamiltonian recovery with ablations"),
                           ("certify", "energy-bound diagnostics")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--config", default=None, help="JSON run configuration (defaults when omitted)")
        sp.add_argument("--out", default=None, help="output directory (overrides the config)")
    return p


EXPERIMENT = {"sweep-occlusion": "exp1", "segment": "exp2", "recover": "exp3", "certify": "certify"}


def _config(args):
    exp = EXPERIMENT[args.command]
    if args.config:
        cfg = load_config(args.config)
        if cfg["experiment"] != exp:
            raise ConfigError(f"{args.config} configures {cfg['experiment']!r}, not {exp!r}")
    else:
        cfg = resolve({}, exp)
    if args.root_seed is not None:
        cfg["root_seed"] = args.root_seed
    if args.out is not None:
        cfg["out"] = args.out
    return cfg


def cmd_simulate(args):
    spec = make_system(args.system)
    rng = np.random.default_rng(args.seed)
    traj = simulate_random(spec, 1, args.steps, rng)[0]
    header, rows = trajectory_rows(traj)
    write_csv(args.out, header, rows)
    if args.manifest:
        with open(args.manifest, "w", encoding="utf-8") as fh:
            fh.write(manifest_text(spec))
    print(f"wrote {args.out} ({len(rows)} rows, {len(traj.switches)} mode switches)")


def cmd_experiment(args):
    cfg = _config(args)
    workers = args.workers or int(cfg.get("workers", 1))
    out = cfg["out"]
    if args.command == "sweep-occlusion":
        from .exp1 import HEADER, run_exp1
        rows, _ = run_exp1(cfg, workers)
        longs = plotdata.long_rows("exp1", HEADER, rows, ("task", "method", "seed"), "occlusion")
    elif args.command == "segment":
        from .exp2 import HEADER, TIMELINE_HEADER, run_exp2, timeline
        rows, _ = run_exp2(cfg, workers)
        longs = plotdata.long_rows("exp2", HEADER, rows, ("task", "method", "seed"))
        for task in cfg["tasks"]:
            write_csv(os.path.join(out, f"timeline_{task}_seed0.csv"), TIMELINE_HEADER, timeline(cfg, task, 0))
    elif args.command == "recover":
        from .exp3 import HEADER, run_exp3
        rows, _, _ = run_exp3(cfg, workers)
        longs = plotdata.long_rows("exp3", HEADER, rows, ("system", "method", "seed"))
    else:
        from .certify import HEADER, run_certify
        rows = run_certify(cfg, workers)
        longs = [["certify", r[0], "gronwall", "", 0, m, r[HEADER.index(m)]]
                 for r in rows for m in ("bound", "empirical_U")]
    plotdata.emit_plotdata(os.path.join(out, "plotdata.csv"), longs)
    bad = [r for r in rows if "status" in HEADER and r[HEADER.index("status")] != "ok"]
    print(f"wrote {len(rows)} rows to {out}" + (f" ({len(bad)} cells with non-ok status)" if bad else ""))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cmd_simulate(args)
        else:
            cmd_experiment(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SupportSafeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
