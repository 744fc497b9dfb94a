"""Regime segmentation against frozen kinematic proxy labels."""

import numpy as np

from ..filtering import DefensiveConfig, ParticleEnsemble, ProposalFamily, filter_step
from ..metrics import segmentation_report
from ..modes import decode_modes
from ..proxy import ProxyConfig, denoise_runs, kinematic_score, quantile_thresholds, score_to_labels
from ..toys import RegimeToy
from .config import matched_ablation_check, write_effective
from .runner import emit, guarded, run_cells, summarize
from .seeds import cell_rng

HEADER = ["task", "method", "seed", "status", "mode_f1", "ari", "changepoint_f1", "segment_purity"]
METRICS = HEADER[4:]
TIMELINE_HEADER = ["t", "true_mode", "proxy_mode", "decoded_mode"]
TASKS = {"regimes": RegimeToy}
IMPACT_MODE = 2


def method_settings(cfg, method):
    s = {
        "N": int(cfg["N"]), "T": int(cfg["T"]), "tau": float(cfg["tau"]), "lambda_fb": float(cfg["lambda_fb"]),
        "ess_trigger": float(cfg["ess_trigger"]), "sharpen": float(cfg["sharpen"]),
        "dropout_mode": IMPACT_MODE, "lambda_policy": "certified", "lambda_fixed": None,
        "predictor": "filter", "min_run": int(cfg["proxy"]["min_run"]),
    }
    if method == "no_support":
        s.update(lambda_policy="fixed", lambda_fixed=0.0)
    elif method == "no_mode":
        s["predictor"] = "constant"
    elif method == "proxy_oracle":
        s["predictor"] = "proxy"
    return s


def _proxy_config(pcfg, theta=(1.0, 2.0)):
    a = pcfg["alpha"]
    return ProxyConfig(alpha_obj=a[0], alpha_ee=a[1], alpha_a=a[2], window=int(pcfg["window"]),
                       theta1=theta[0], theta2=theta[1], min_run=int(pcfg["min_run"]), eps=float(pcfg["eps"]))


def _score(rec, pc):
    return kinematic_score(rec["p_obj"], rec["p_ee"], rec["a"], pc)


def freeze_thresholds(cfg, task):
    """Thresholds from a validation seed pool disjoint from the evaluation seeds."""
    toy = TASKS[task]()
    pc = _proxy_config(cfg["proxy"])
    scores = []
    for v in range(int(cfg["validation_seeds"])):
        rec = toy.simulate(int(cfg["T"]), cell_rng(cfg["root_seed"], "exp2", task, "validation", 0, v))
        scores.append(_score(rec, pc))
    return quantile_thresholds(scores, cfg["proxy"]["q1"], cfg["proxy"]["q2"])


def decode_filter(toy, rec, s, rng):
    law, om = toy.law(), toy.obs_model()
    drop = [0.0] * toy.M
    drop[s["dropout_mode"]] = 1.0
    prop = ProposalFamily(pull=1.0, sharpen=s["sharpen"], dropout=tuple(drop), dropout_observed=True)
    dc = DefensiveConfig(n_particles=s["N"], tau=s["tau"], lambda_fb=s["lambda_fb"], ess_trigger=s["ess_trigger"],
                         proposal=prop, lambda_policy=s["lambda_policy"],
                         lambda_fixed=0.5 if s["lambda_fixed"] is None else s["lambda_fixed"])
    N = s["N"]
    ens = ParticleEnsemble.initial(np.zeros(N, dtype=int), np.zeros((N, 1)))
    for t in range(len(rec["obs"])):
        filter_step(ens, None, rec["obs"][t], dc, law, om, rng, t=t)
    labels, _ = decode_modes(np.array(ens.posteriors))
    return labels


def predict(settings, root, task, method, seed, thresholds, proxy_cfg):
    s = settings
    toy = TASKS[task](sharpen=s["sharpen"])
    rec = toy.simulate(s["T"], cell_rng(root, "exp2", task, "data", 0, seed))
    pc = _proxy_config(proxy_cfg, thresholds)
    proxy = score_to_labels(_score(rec, pc), pc)
    if s["predictor"] == "constant":
        pred = np.zeros(s["T"], dtype=int)
    elif s["predictor"] == "proxy":
        pred = proxy.copy()
    else:
        pred = denoise_runs(decode_filter(toy, rec, s, cell_rng(root, "exp2", task, method, 0, seed)), s["min_run"])
    return rec["modes"], proxy, pred


def run_cell(settings, root, task, method, seed, thresholds, proxy_cfg, tol):
    _, proxy, pred = predict(settings, root, task, method, seed, thresholds, proxy_cfg)
    rep = segmentation_report(pred, proxy, tol)
    return {"mode_f1": rep.mode_f1, "ari": rep.ari, "changepoint_f1": rep.changepoint_f1,
            "segment_purity": rep.segment_purity}


def _cell(args):
    settings, root, task, method, seed, thr, pcfg, tol = args
    row = guarded(lambda sd: run_cell(settings, root, task, method, sd, thr, pcfg, tol), seed, METRICS)
    return [task, method, seed, row.pop("status")] + [row.get(k) for k in METRICS]


def run_exp2(cfg, workers=1, write=True):
    for t in cfg["tasks"]:
        if t not in TASKS:
            raise ValueError(f"unknown exp2 task {t!r}")
    settings = {m: method_settings(cfg, m) for m in cfg["methods"]}
    matched_ablation_check("exp2", settings)
    root = int(cfg["root_seed"])
    thresholds = {t: freeze_thresholds(cfg, t) for t in cfg["tasks"]}
    jobs = [(settings[m], root, t, m, s, thresholds[t], cfg["proxy"], int(cfg["changepoint_tol"]))
            for t in cfg["tasks"] for m in cfg["methods"] for s in range(int(cfg["seeds"]))]
    rows = run_cells(_cell, jobs, workers)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    summary = summarize([dict(zip(HEADER, r)) for r in rows], ["task", "method"], METRICS)
    if write:
        eff = dict(cfg)
        eff["frozen_thresholds"] = {t: list(v) for t, v in thresholds.items()}
        write_effective(eff, settings)
        emit(cfg["out"], "exp2.csv", HEADER, rows)
        emit(cfg["out"], "exp2_summary.csv", ["task", "method", "metric", "mean", "sem", "n"], summary)
    return rows, summary


def timeline(cfg, task, seed, method="full"):
    """Mode-timeline rows ``t,true_mode,proxy_mode,decoded_mode`` (1-based labels)."""
    thr = freeze_thresholds(cfg, task)
    true, proxy, pred = predict(method_settings(cfg, method), int(cfg["root_seed"]), task, method, seed,
                                thr, cfg["proxy"])
    return [[t, int(a) + 1, int(b) + 1, int(c) + 1] for t, (a, b, c) in enumerate(zip(true, proxy, pred))]
