import json
import os

import numpy as np
import pytest

from supportsafe.harness import plotdata
from supportsafe.harness.cli import main
from supportsafe.harness.config import (DEFAULTS, ConfigError, load_config, matched_ablation_check, resolve)
from supportsafe.harness.exp1 import HEADER as EXP1_HEADER, run_exp1
from supportsafe.harness.exp2 import run_exp2
from supportsafe.harness.exp3 import HEADER as EXP3_HEADER, run_exp3
from supportsafe.harness.seeds import cell_rng, cell_seed
from supportsafe.io import fmt, read_csv


def test_resolve_defaults():
    cfg = resolve({}, "exp1")
    assert cfg["seeds"] == 20 and cfg["occlusions"] == DEFAULTS["exp1"]["occlusions"]
    assert cfg["root_seed"] == 0 and cfg["experiment"] == "exp1"
    cfg = resolve({"experiment": "exp2", "proxy": {"window": 7}})
    assert cfg["proxy"]["window"] == 7 and cfg["proxy"]["min_run"] == 3


@pytest.mark.parametrize("raw", [
    {"experiment": "exp1", "bogus": 1},
    {"experiment": "exp2", "proxy": {"nope": 1}},
    {"experiment": "exp9"},
    {},
    {"experiment": "exp1", "schema_version": "0"},
    {"experiment": "exp1", "seeds": 0},
    {"experiment": "exp1", "methods": []},
    {"experiment": "exp1", "methods": ["magic"]},
    {"experiment": "exp1", "occlusions": [1.0]},
    {"experiment": "exp1", "root_seed": -1},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        resolve(raw)


def test_experiment_mismatch():
    with pytest.raises(ConfigError):
        resolve({"experiment": "exp1"}, "exp2")


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"experiment": "exp3", "seeds": 2}))
    assert load_config(p)["seeds"] == 2
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_matched_ablation():
    ref = {"N": 100, "lambda_policy": "certified", "lambda_fixed": None, "latent": "hybrid"}
    ok = {"full_adaptive": ref, "conservative": dict(ref, lambda_policy="fixed", lambda_fixed=0.5)}
    assert matched_ablation_check("exp1", ok)["conservative"] == ["lambda_fixed", "lambda_policy"]
    with pytest.raises(ConfigError):
        matched_ablation_check("exp1", {"full_adaptive": ref, "conservative": dict(ref, N=50)})


def test_seed_streams():
    a = cell_rng(7, "exp1", "contact", "full", 0.5, 3).random(4)
    b = cell_rng(7, "exp1", "contact", "full", 0.5, 3).random(4)
    np.testing.assert_array_equal(a, b)
    others = [cell_rng(8, "exp1", "contact", "full", 0.5, 3), cell_rng(7, "exp1", "contact", "lambda0", 0.5, 3),
              cell_rng(7, "exp1", "contact", "full", 0.25, 3), cell_rng(7, "exp1", "contact", "full", 0.5, 4)]
    for r in others:
        assert not np.array_equal(a, r.random(4))
    assert cell_seed(7, "exp1", "contact", "full", 0.5, 3).entropy == 7


def test_fmt():
    assert fmt(None) == "" and fmt(float("nan")) == ""
    assert fmt(True) == "1" and fmt(np.bool_(False)) == "0"
    assert fmt(np.int64(3)) == "3"
    assert fmt(0.1) == "0.1" and float(fmt(1 / 3)) == 1 / 3


def test_plotdata_empty(tmp_path):
    p = plotdata.emit_plotdata(tmp_path / "p.csv", [])
    assert p.read_text() == ",".join(plotdata.HEADER) + "\n"
    assert plotdata.read_plotdata(p) == []


def test_plotdata_long_and_roundtrip(tmp_path):
    header = ["task", "method", "occlusion", "seed", "status", "nll", "ess_n"]
    rows = [["contact", "full", 0.5, s, "ok", 1.25 + s, None] for s in range(2)]
    longs = plotdata.long_rows("exp1", header, rows, ("task", "method", "seed"), "occlusion")
    assert len(longs) == 4
    p = plotdata.emit_plotdata(tmp_path / "p.csv", longs)
    back = plotdata.read_plotdata(p)
    assert sorted(map(tuple, back), key=str) == sorted(map(tuple, longs), key=str)
    assert plotdata.render_plotdata(back) == p.read_text()
    with pytest.raises(ValueError):
        plotdata.parse_plotdata("a,b\n1,2\n")


SMALL = {
    "exp1": {"experiment": "exp1", "occlusions": [0.5], "seeds": 2, "N": 20, "T": 30, "replications": 2},
    "exp2": {"experiment": "exp2", "seeds": 2, "validation_seeds": 1, "N": 20, "T": 120},
    "exp3": {"experiment": "exp3", "tasks": ["puck"], "seeds": 1, "trajectories": 2, "steps": 400},
    "certify": {"experiment": "certify", "tasks": ["linear_a", "puck"], "rollouts": 200, "steps": 40,
                "hybrid_rollouts": 4, "hybrid_steps": 50},
}
COMMAND = {"exp1": "sweep-occlusion", "exp2": "segment", "exp3": "recover", "certify": "certify"}


def _run_cli(tmp_path, exp, tag):
    cfgp = tmp_path / f"{exp}.json"
    cfgp.write_text(json.dumps(SMALL[exp]))
    out = tmp_path / tag
    assert main([COMMAND[exp], "--config", str(cfgp), "--out", str(out)]) == 0
    return {f: (out / f).read_bytes() for f in sorted(os.listdir(out)) if f.endswith(".csv")}


@pytest.mark.parametrize("exp", sorted(SMALL))
def test_cli_reruns_byte_identical(tmp_path, exp):
    first = _run_cli(tmp_path, exp, "a")
    second = _run_cli(tmp_path, exp, "b")
    assert "plotdata.csv" in first
    assert first == second


def test_workers_do_not_change_output(tmp_path):
    cfg = resolve(dict(SMALL["exp1"], out=str(tmp_path / "x")))
    rows1, _ = run_exp1(cfg, workers=1, write=False)
    rows2, _ = run_exp1(cfg, workers=2, write=False)
    assert rows1 == rows2


def test_exp2_rows_and_timeline(tmp_path):
    files = _run_cli(tmp_path, "exp2", "seg")
    assert "timeline_regimes_seed0.csv" in files
    head = files["timeline_regimes_seed0.csv"].decode().splitlines()[0]
    assert head == "t,true_mode,proxy_mode,decoded_mode"
    rows, _ = run_exp2(resolve(SMALL["exp2"]), write=False)
    assert len(rows) == 4 * 2
    assert all(r[3] == "ok" for r in rows)
    for r in rows:
        if r[1] == "proxy_oracle":
            assert r[4:] == [1.0, 1.0, 1.0, 1.0]
        if r[1] == "no_mode":
            assert r[5] == 0.0 and r[6] == 0.0


def test_exp1_no_occlusion_all_finite():
    rows, _ = run_exp1(resolve(dict(SMALL["exp1"], occlusions=[0.0])), write=False)
    nll = [dict(zip(EXP1_HEADER, r))["nll"] for r in rows]
    assert len(nll) == 4 * 2 and all(np.isfinite(nll))


def test_exp3_no_ph_emits_na():
    rows, _, _ = run_exp3(resolve(SMALL["exp3"]), write=False)
    by = {r[1]: dict(zip(EXP3_HEADER, r)) for r in rows}
    assert set(by) == set(DEFAULTS["exp3"]["methods"])
    assert by["no_ph"]["support_f1"] is None and by["no_ph"]["vf_nrmse"] is not None


def test_certify_reports_assumption_status(tmp_path):
    files = _run_cli(tmp_path, "certify", "cert")
    header, rows = read_csv(tmp_path / "cert" / "certificates.csv")
    assert header == ["system", "alpha", "C_E", "T", "bound", "empirical_U", "pass", "status"]
    st = {r[0]: r for r in rows}
    assert st["linear_a"][-1] == "ok" and st["linear_a"][6] == "1"
    assert st["puck"][-1] == "ASSUMPTION_UNMET" and st["puck"][1] == ""


def test_cli_simulate(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    man = tmp_path / "m.json"
    assert main(["simulate", "--system", "block", "--seed", "3", "--steps", "50", "--out", str(out),
                 "--manifest", str(man)]) == 0
    header, rows = read_csv(out)
    assert header[:2] == ["t", "s"] and len(rows) == 50
    assert json.loads(man.read_text())
    first = out.read_bytes()
    main(["simulate", "--system", "block", "--seed", "3", "--steps", "50", "--out", str(out)])
    assert out.read_bytes() == first


def test_cli_errors(tmp_path, capsys):
    assert main(["recover", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": "exp1", "seeds": 0}))
    assert main(["sweep-occlusion", "--config", str(bad)]) == 2
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"experiment": "exp1"}))
    assert main(["recover", "--config", str(other)]) == 2
    with pytest.raises(SystemExit):
        main(["simulate", "--system", "block", "--seed", "-1", "--steps", "5", "--out", "x"])
    assert "error" in capsys.readouterr().err


def test_unvisited_mode_is_a_cell_status():
    cfg = resolve({"experiment": "exp3", "tasks": ["block"], "seeds": 1, "trajectories": 2, "steps": 800,
                   "root_seed": 12345})
    rows, _, _ = run_exp3(cfg, write=False)
    status = {r[1]: r[3] for r in rows}
    assert status["full"] == "EMPTY_INPUT"
    assert status["no_mode"] == "ok"
