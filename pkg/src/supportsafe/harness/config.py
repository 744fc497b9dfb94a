"""Versioned JSON run configuration with per-experiment defaults."""

import copy
import json
import os

SCHEMA_VERSION = "1"

EXP1_METHODS = ("full_adaptive", "conservative", "lambda0", "smooth_latent")
EXP2_METHODS = ("full", "no_support", "no_mode", "proxy_oracle")
EXP3_METHODS = ("full", "no_mode", "no_sparsity", "no_ph")

DEFAULTS = {
    "exp1": {
        "tasks": ["contact"],
        "methods": list(EXP1_METHODS),
        "occlusions": [0.0, 0.25, 0.5, 0.75, 0.9],
        "seeds": 20,
        "N": 100,
        "T": 200,
        "tau": 0.15,
        "lambda_fb": 0.5,
        "lambda_conservative": 0.5,
        "ess_trigger": 0.5,
        "replications": 8,
        "sharpen": 0.5,
    },
    "exp2": {
        "tasks": ["regimes"],
        "methods": list(EXP2_METHODS),
        "occlusions": [0.0],
        "seeds": 20,
        "validation_seeds": 5,
        "N": 100,
        "T": 1000,
        "tau": 0.15,
        "lambda_fb": 0.5,
        "ess_trigger": 0.5,
        "sharpen": 0.5,
        "changepoint_tol": 2,
        "proxy": {"alpha": [1.0, 1.0, 0.5], "window": 5, "min_run": 3, "eps": 1e-9,
                  "q1": 60.0, "q2": 90.0},
    },
    "exp3": {
        "tasks": ["puck", "block", "pendulum", "pusher"],
        "methods": list(EXP3_METHODS),
        "occlusions": [0.05],
        "seeds": 20,
        "trajectories": 4,
        "steps": 3000,
        "delta": 0.05,
        "sigma_obs": 0.002,
        "hidden_velocity_rate": 0.1,
        "sigma_der": 0.05,
        "eps_mode": 0.02,
        "purity_halo": 8,
        "smoothing": 5,
        "ph_perturbation": 0.01,
        "rel_threshold": 0.02,
        "bic_penalty": 1.0,
        "trim": 8.0,
    },
    "certify": {
        "tasks": ["linear_a", "linear_b", "linear_c", "puck", "block", "pendulum", "pusher"],
        "methods": ["gronwall"],
        "occlusions": [0.0],
        "seeds": 1,
        "rollouts": 2000,
        "steps": 200,
        "dt": 0.05,
        "hybrid_steps": 500,
        "hybrid_rollouts": 32,
    },
}

# fields each method may change relative to the experiment's reference method
MECHANISMS = {
    "exp1": {
        "full_adaptive": set(),
        "conservative": {"lambda_policy", "lambda_fixed"},
        "lambda0": {"lambda_policy", "lambda_fixed"},
        "smooth_latent": {"latent"},
    },
    "exp2": {
        "full": set(),
        "no_support": {"lambda_policy", "lambda_fixed"},
        "no_mode": {"predictor"},
        "proxy_oracle": {"predictor"},
    },
    "exp3": {
        "full": set(),
        "no_mode": {"mode_conditioning"},
        "no_sparsity": {"sparse"},
        "no_ph": {"structure"},
    },
    "certify": {"gronwall": set()},
}


class ConfigError(ValueError):
    code = "INVALID_CONFIG"


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return resolve(raw)


def resolve(raw, experiment=None):
    """Merge ``raw`` over the experiment defaults and validate."""
    raw = dict(raw or {})
    version = str(raw.pop("schema_version", SCHEMA_VERSION))
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    exp = raw.pop("experiment", experiment)
    if exp is None:
        raise ConfigError("config must name an experiment")
    if experiment is not None and exp != experiment:
        raise ConfigError(f"config is for {exp!r}, not {experiment!r}")
    if exp not in DEFAULTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    cfg = copy.deepcopy(DEFAULTS[exp])
    unknown = set(raw) - set(cfg) - {"out", "root_seed", "workers"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, val in raw.items():
        if isinstance(cfg.get(key), dict) and isinstance(val, dict):
            extra = set(val) - set(cfg[key])
            if extra:
                raise ConfigError(f"unknown keys in {key}: {sorted(extra)}")
            cfg[key].update(val)
        else:
            cfg[key] = val
    cfg["experiment"] = exp
    cfg["schema_version"] = SCHEMA_VERSION
    cfg.setdefault("out", os.path.join("results", exp))
    cfg.setdefault("root_seed", 0)
    validate(cfg)
    return cfg


def validate(cfg):
    if int(cfg["seeds"]) < 1:
        raise ConfigError("seeds must be >= 1")
    if not cfg["methods"]:
        raise ConfigError("methods must be nonempty")
    if not cfg["tasks"]:
        raise ConfigError("tasks must be nonempty")
    known = MECHANISMS[cfg["experiment"]]
    bad = [m for m in cfg["methods"] if m not in known]
    if bad:
        raise ConfigError(f"unknown methods for {cfg['experiment']}: {bad}")
    for occ in cfg["occlusions"]:
        if not 0.0 <= float(occ) < 1.0:
            raise ConfigError(f"occlusion {occ} outside [0, 1)")
    if int(cfg["root_seed"]) < 0:
        raise ConfigError("root_seed must be a non-negative integer")


def matched_ablation_check(experiment, settings):
    """Verify that each method's effective settings differ from the reference only in its declared fields.

    ``settings`` maps method -> flat dict.  Returns the per-method diff.
    """
    mech = MECHANISMS[experiment]
    ref_name = next(iter(mech))
    if ref_name not in settings:
        ref_name = next(iter(settings))
    ref = settings[ref_name]
    diffs = {}
    for name, s in settings.items():
        keys = set(ref) | set(s)
        diff = {k for k in keys if ref.get(k) != s.get(k)}
        allowed = mech.get(name, set()) | mech.get(ref_name, set())
        if not diff <= allowed:
            raise ConfigError(f"method {name} differs from {ref_name} in undeclared fields {sorted(diff - allowed)}")
        diffs[name] = sorted(diff)
    return diffs


def write_effective(cfg, settings=None):
    """Echo the effective configuration (and per-method settings) into the output directory."""
    os.makedirs(cfg["out"], exist_ok=True)
    doc = dict(cfg)
    if settings is not None:
        doc["method_settings"] = settings
    path = os.path.join(cfg["out"], "effective_config.json")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path
