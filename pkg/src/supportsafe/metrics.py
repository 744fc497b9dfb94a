"""Segmentation and calibration metrics."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .errors import EmptyInputError


@dataclass(frozen=True)
class SegmentationReport:
    mode_f1: float
    ari: float
    changepoint_f1: float
    segment_purity: float
    permutation: dict


@dataclass(frozen=True)
class CalibrationReport:
    nll: float
    ece: float
    cov90: float


def _pair(pred, true):
    pred, true = np.asarray(pred).ravel(), np.asarray(true).ravel()
    if pred.shape != true.shape:
        raise ValueError("pred and true must have equal lengths")
    return pred, true


def confusion(pred, true):
    """Contingency table (true classes x pred classes) with the label lists."""
    pred, true = _pair(pred, true)
    tl, ti = np.unique(true, return_inverse=True)
    pl, pi = np.unique(pred, return_inverse=True)
    C = np.zeros((len(tl), len(pl)), dtype=np.int64)
    np.add.at(C, (ti, pi), 1)
    return C, tl, pl


def _f1_matrix(C):
    """Per-pair F1 of true class r against predicted class c."""
    denom = C.sum(axis=1)[:, None] + C.sum(axis=0)[None, :]
    return np.where(denom > 0, 2.0 * C / np.maximum(denom, 1), 0.0)


def mode_f1(pred, true):
    """Macro F1 over true classes under the best bijection of labels.

    Macro F1 is a sum over matched (true, pred) pairs, so the assignment
    solved on the per-pair F1 matrix is exact.  Unmatched true classes score
    0.  Returns ``(f1, permutation)`` where ``permutation`` maps predicted
    labels to the true labels they are matched with.
    """
    pred, true = _pair(pred, true)
    if pred.size == 0:
        raise EmptyInputError("mode_f1 needs at least one label")
    C, tl, pl = confusion(pred, true)
    F = _f1_matrix(C)
    rows, cols = linear_sum_assignment(F, maximize=True)
    perm = {pl[c].item(): tl[r].item() for r, c in zip(rows, cols)}
    return float(F[rows, cols].sum() / C.shape[0]), perm


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1.0) / 2.0


def ari(pred, true):
    """Adjusted Rand index; when the chance-corrected denominator vanishes, 1 if the partitions agree else 0."""
    pred, true = _pair(pred, true)
    n = pred.size
    if n == 0:
        raise EmptyInputError("ari needs at least one label")
    C, _, _ = confusion(pred, true)
    index = _comb2(C).sum()
    a = _comb2(C.sum(axis=1)).sum()
    b = _comb2(C.sum(axis=0)).sum()
    total = _comb2(n)
    expected = a * b / total if total > 0 else 0.0
    denom = 0.5 * (a + b) - expected
    if denom == 0:
        same = C.shape[0] == C.shape[1] and np.count_nonzero(C) == C.shape[0]
        return 1.0 if same else 0.0
    return float((index - expected) / denom)


def change_points(labels):
    labels = np.asarray(labels).ravel()
    return np.flatnonzero(labels[1:] != labels[:-1]) + 1


def changepoint_f1(pred, true, tol=2):
    """F1 of change points matched one-to-one within ``+-tol`` steps (greedy, closest first)."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    pred, true = _pair(pred, true)
    cp, ct = change_points(pred), change_points(true)
    if cp.size == 0 and ct.size == 0:
        return 1.0
    if cp.size == 0 or ct.size == 0:
        return 0.0
    cand = sorted((abs(int(p) - int(t)), int(t), int(p)) for p in cp for t in ct if abs(int(p) - int(t)) <= tol)
    used_p, used_t = set(), set()
    for _, t, p in cand:
        if p not in used_p and t not in used_t:
            used_p.add(p)
            used_t.add(t)
    m = len(used_p)
    if m == 0:
        return 0.0
    prec, rec = m / cp.size, m / ct.size
    return 2 * prec * rec / (prec + rec)


def segment_purity(pred, true):
    """Duration-weighted majority true-label fraction over predicted segments."""
    pred, true = _pair(pred, true)
    n = pred.size
    if n == 0:
        raise EmptyInputError("segment_purity needs at least one label")
    bounds = np.concatenate([[0], change_points(pred), [n]])
    hit = 0
    for s, e in zip(bounds[:-1], bounds[1:]):
        _, counts = np.unique(true[s:e], return_counts=True)
        hit += counts.max()
    return hit / n


def segmentation_report(pred, true, tol=2):
    f1, perm = mode_f1(pred, true)
    return SegmentationReport(f1, ari(pred, true), changepoint_f1(pred, true, tol), segment_purity(pred, true), perm)


# ---------------------------------------------------------------------------
# calibration

Z90 = stats.norm.ppf(0.95)


def gaussian_nll(mean, var, y):
    """Mean negative log-density per step, summing over coordinates."""
    mean, var, y = (np.asarray(x, dtype=float) for x in (mean, var, y))
    if y.size == 0:
        raise EmptyInputError("no predictive pairs")
    if np.any(var <= 0):
        raise ValueError("predictive variances must be positive")
    nl = 0.5 * (np.log(2 * math.pi * var) + (y - mean) ** 2 / var)
    return float(nl.reshape(nl.shape[0], -1).sum(axis=1).mean())


def coverage(mean, var, y, level=0.9):
    mean, var, y = (np.asarray(x, dtype=float) for x in (mean, var, y))
    if y.size == 0:
        raise EmptyInputError("no predictive pairs")
    z = stats.norm.ppf(0.5 + level / 2)
    return float(np.mean(np.abs(y - mean) <= z * np.sqrt(var)))


def ece(confidence, correct, bins=10):
    """Expected calibration error with equal-width bins on [0, 1]."""
    conf = np.asarray(confidence, dtype=float).ravel()
    corr = np.asarray(correct, dtype=float).ravel()
    if conf.size == 0:
        raise EmptyInputError("no confidence pairs")
    if conf.shape != corr.shape:
        raise ValueError("confidence and correctness must align")
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    total = 0.0
    for b in range(bins):
        sel = idx == b
        if sel.any():
            total += sel.sum() * abs(corr[sel].mean() - conf[sel].mean())
    return float(total / conf.size)


def calibration(mean, var, y, confidence, correct, bins=10):
    """NLL and 90% coverage of Gaussian predictives plus ECE of (confidence, correctness) pairs."""
    return CalibrationReport(gaussian_nll(mean, var, y), ece(confidence, correct, bins), coverage(mean, var, y, 0.9))


def mean_sem(values):
    """(mean, standard error) ignoring NaN; SEM is NaN with fewer than two values."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
