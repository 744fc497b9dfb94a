"""Kinematic proxy labels: free / impact / stick-slip from logged positions and actions."""

from dataclasses import dataclass

import numpy as np

from .systems import moving_average

LABELS = ("free", "impact", "stickslip")
FREE, IMPACT, STICKSLIP = range(3)


@dataclass(frozen=True)
class ProxyConfig:
    alpha_obj: float = 1.0
    alpha_ee: float = 1.0
    alpha_a: float = 0.5
    window: int = 5
    theta1: float = 1.0
    theta2: float = 2.0
    min_run: int = 3
    eps: float = 1e-9

    def __post_init__(self):
        if not self.theta1 < self.theta2:
            raise ValueError("need theta1 < theta2")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("smoothing window must be a positive odd integer")
        if self.min_run < 1:
            raise ValueError("min_run must be >= 1")
        if min(self.alpha_obj, self.alpha_ee, self.alpha_a, self.eps) < 0:
            raise ValueError("weights and eps must be >= 0")


def mad(series):
    """Median absolute deviation from the median."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("mad of an empty series")
    return float(np.median(np.abs(x - np.median(x))))


def _step_norms(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = np.linalg.norm(np.diff(x, axis=0), axis=1)
    return np.concatenate([[0.0], d])


def _normalized(x, eps):
    r = _step_norms(x)
    scale = mad(r[1:]) + eps
    if scale == 0.0:
        return np.zeros_like(r)
    return r / scale


def kinematic_score(p_obj, p_ee, a, cfg):
    """Smoothed score ``alpha_obj r_obj + alpha_ee r_ee + alpha_a r_a``.

    Each ``r`` is the finite-difference norm divided by its MAD plus ``eps``.
    """
    n = len(p_obj)
    if n < 2 or len(p_ee) != n or len(a) != n:
        raise ValueError("need aligned series of length >= 2")
    c = (cfg.alpha_obj * _normalized(p_obj, cfg.eps) + cfg.alpha_ee * _normalized(p_ee, cfg.eps)
         + cfg.alpha_a * _normalized(a, cfg.eps))
    return moving_average(c, cfg.window)


def quantile_thresholds(scores, q1=60.0, q2=90.0):
    """(theta1, theta2) from percentiles of pooled validation scores."""
    s = np.concatenate([np.ravel(x) for x in scores]) if isinstance(scores, (list, tuple)) else np.ravel(scores)
    t1, t2 = np.percentile(s, [q1, q2])
    if not t1 < t2:
        t2 = np.nextafter(t1, np.inf)
    return float(t1), float(t2)


def runs(labels):
    """Maximal constant runs as (start, length, label)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cut = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], cut])
    ends = np.concatenate([cut, [labels.size]])
    return [(int(s), int(e - s), labels[s]) for s, e in zip(starts, ends)]


def denoise_runs(labels, min_run):
    """Absorb runs shorter than ``min_run`` into a neighbouring run.

    The shortest run goes first (leftmost on ties); it merges into the
    neighbour with the longer run, the left one on ties.  Repeats until every
    run is long enough or a single run remains.
    """
    out = np.asarray(labels).copy()
    if min_run <= 1 or out.size == 0:
        return out
    while True:
        rs = runs(out)
        if len(rs) <= 1:
            return out
        short = [(length, i) for i, (_, length, _) in enumerate(rs) if length < min_run]
        if not short:
            return out
        _, i = min(short)
        start, length, _ = rs[i]
        left = rs[i - 1] if i > 0 else None
        right = rs[i + 1] if i + 1 < len(rs) else None
        if right is None or (left is not None and left[1] >= right[1]):
            target = left[2]
        else:
            target = right[2]
        out[start:start + length] = target


def score_to_labels(score, cfg):
    """Threshold into {free, impact, stickslip} codes, then min-run denoising."""
    c = np.asarray(score, dtype=float)
    labels = np.full(c.shape, STICKSLIP, dtype=int)
    labels[c < cfg.theta1] = FREE
    labels[c >= cfg.theta2] = IMPACT
    return denoise_runs(labels, cfg.min_run)


def label_names(codes):
    return [LABELS[int(c)] for c in codes]
