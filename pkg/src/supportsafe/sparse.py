"""Mode-conditioned sparse port-Hamiltonian regression.

The regression stacks, for every sample ``i`` of one mode,

    A_i = (J - R) grad Theta(z_i)^T        (d x p block)
    b_i = zdot_i - G a_i

and solves the Lasso ``min (1/2n)|b - A xi|^2 + lam |xi|_1`` with ``n`` the
number of stacked rows.
"""

from dataclasses import dataclass, field
from itertools import combinations, product
import math

import numpy as np

from .errors import BoundViolationError, DimensionMismatchError, EmptyInputError, NoConvergenceError
from .library import build_library


def plugin_design(library, J, R, G, states, derivatives, actions):
    """Stacked plug-in design ``(A, b)`` with ``A`` of shape (n*d, p)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    derivatives = np.atleast_2d(np.asarray(derivatives, dtype=float))
    actions = np.asarray(actions, dtype=float)
    if actions.ndim == 1:
        actions = actions[:, None]
    n, d = states.shape
    J, R, G = (np.asarray(x, dtype=float) for x in (J, R, G))
    if derivatives.shape != (n, d) or actions.shape[0] != n:
        raise DimensionMismatchError("states, derivatives and actions must have matching rows")
    if J.shape != (d, d) or R.shape != (d, d) or G.shape != (d, actions.shape[1]):
        raise DimensionMismatchError("structure matrices do not match the state/input dimensions")
    if library.dim != d:
        raise DimensionMismatchError("library coordinates do not match the state dimension")
    _, grads = build_library(states, library)  # (n, p, d)
    A = np.einsum("ij,npj->nip", J - R, grads).reshape(n * d, library.size)
    b = (derivatives - actions @ G.T).reshape(n * d)
    return A, b


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_objective(A, b, xi, lam):
    n = A.shape[0]
    r = b - A @ xi
    return r @ r / (2.0 * n) + lam * np.abs(xi).sum()


def kkt_residual(A, b, xi, lam):
    """Largest violation of the Lasso optimality conditions."""
    n = A.shape[0]
    grad = A.T @ (b - A @ xi) / n
    active = xi != 0
    viol = np.zeros_like(grad)
    viol[active] = np.abs(grad[active] - lam * np.sign(xi[active]))
    viol[~active] = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    return float(viol.max()) if viol.size else 0.0


@dataclass
class LassoInfo:
    sweeps: int
    kkt: float
    objective: list = field(default_factory=list)
    polished: bool = False


def lasso(A, b, lam, tol=1e-8, max_sweeps=100_000, return_info=False):
    """Cyclic coordinate descent from zero on standardized columns.

    The l1 penalty is carried over exactly (per-column weights ``lam / s_j``),
    so the returned coefficients solve the unstandardized problem.  Whenever
    the coordinate sweeps settle on an active set, an active-set search
    started from the iterate finishes the solve; this matters on
    ill-conditioned designs where the sweeps contract slowly.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if lam < 0:
        raise ValueError("penalty must be >= 0")
    n, p = A.shape
    scale = np.sqrt((A * A).sum(axis=0) / n)
    live = scale > 0
    s = np.where(live, scale, 1.0)
    As = A / s
    gram = As.T @ As / n
    corr = As.T @ b / n
    pen = np.where(live, lam / s, np.inf)
    beta = np.zeros(p)
    grad = corr.copy()  # corr - gram @ beta
    b2 = b @ b / (2.0 * n)

    def objective(bt):
        return b2 - corr @ bt + 0.5 * bt @ gram @ bt + (pen[live] * np.abs(bt[live])).sum()

    def violation(bt, gr):
        g = gr[live]
        act = bt[live] != 0
        v = np.where(act, np.abs(g - pen[live] * np.sign(bt[live])), np.maximum(np.abs(g) - pen[live], 0.0))
        # back to the original coefficient scale
        return float((v * s[live]).max()) if v.size else 0.0

    history = [objective(beta)]
    polished = False
    last_support = None
    for sweep in range(1, max_sweeps + 1):
        for j in np.flatnonzero(live):
            old = beta[j]
            rho = grad[j] + gram[j, j] * old
            new = soft_threshold(rho, pen[j]) / gram[j, j]
            if new != old:
                beta[j] = new
                grad -= gram[:, j] * (new - old)
        history.append(objective(beta))
        kkt = violation(beta, grad)
        if kkt <= tol:
            break
        support = tuple(np.flatnonzero(beta))
        if support and support == last_support:
            cand = _feature_sign(gram, corr, pen, beta, live)
            cand_grad = corr - gram @ cand
            if objective(cand) <= history[-1]:
                beta, grad = cand, cand_grad
                history.append(objective(beta))
                kkt = violation(beta, grad)
                if kkt <= tol:
                    polished = True
                    break
        last_support = support
    else:
        raise NoConvergenceError(f"coordinate descent did not reach KKT tolerance {tol} in {max_sweeps} sweeps")
    xi = np.where(live, beta / s, 0.0)
    if return_info:
        return xi, LassoInfo(sweeps=sweep, kkt=kkt_residual(A, b, xi, lam), objective=history, polished=polished)
    return xi


def _feature_sign(gram, corr, pen, beta, live, max_iter=500):
    """Active-set refinement of a coordinate-descent iterate.

    Alternates an exact solve on the signed active set with a line search
    that stops at the first sign change, and activates the worst KKT
    violator once the active set is optimal.  The objective never increases.
    """
    x = beta.copy()
    obj = lambda v: -corr @ v + 0.5 * v @ gram @ v + (pen[live] * np.abs(v[live])).sum()
    for _ in range(max_iter):
        g = corr - gram @ x
        act = np.flatnonzero(x)
        viol_act = np.abs(g[act] - pen[act] * np.sign(x[act])) if act.size else np.zeros(0)
        if act.size == 0 or viol_act.max() <= 1e-14 * max(1.0, np.abs(corr).max()):
            free = np.flatnonzero(live & (x == 0) & (np.abs(g) > pen))
            if free.size == 0:
                return x
            j = free[np.argmax(np.abs(g[free]) - pen[free])]
            theta = np.sign(x)
            theta[j] = np.sign(g[j])
            act = np.flatnonzero(theta)
        else:
            theta = np.sign(x)
        sub = gram[np.ix_(act, act)]
        rhs = corr[act] - pen[act] * theta[act]
        sol = np.linalg.lstsq(sub, rhs, rcond=None)[0]
        target = np.zeros_like(x)
        target[act] = sol
        # candidate points: the target and every zero crossing on the way to it
        d = target - x
        cross = {int(i): float(-x[i] / d[i]) for i in act
                 if x[i] != 0 and np.sign(target[i]) != np.sign(x[i])}
        best, best_obj = x, obj(x)
        for t in sorted(set(cross.values()) | {1.0}):
            cand = x + t * d
            for i, ti in cross.items():
                if ti == t:
                    cand[i] = 0.0
            o = obj(cand)
            if o < best_obj:
                best, best_obj = cand, o
        if best is x:
            return x
        x = best
    return x


def least_squares(A, b):
    xi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return xi


def ridge(A, b, alpha=1e-8):
    """Ridge fit with penalty ``alpha * mean(diag(A^T A / n))``."""
    n, p = A.shape
    gram = A.T @ A / n
    reg = alpha * max(np.trace(gram) / p, 1e-300)
    return np.linalg.solve(gram + reg * np.eye(p), A.T @ b / n)


def noise_scale(A, b, alpha=1e-8):
    """Residual standard deviation of a preliminary ridge fit."""
    n, p = A.shape
    r = b - A @ ridge(A, b, alpha)
    return float(np.sqrt(r @ r / max(n - p, 1)))


def design_scale(A):
    """L_A = max_j |A_j|_2 / sqrt(n)."""
    n = A.shape[0]
    return float(np.sqrt((A * A).sum(axis=0) / n).max())


def choose_penalty(L_A, sigma, p, n, delta, nu=0.0):
    """lam = 2 [L_A sigma sqrt(2 log(2p/delta) / n) + nu]."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if min(L_A, sigma, nu) < 0 or n <= 0 or p <= 0:
        raise ValueError("penalty inputs must be nonnegative")
    return 2.0 * (L_A * sigma * math.sqrt(2.0 * math.log(2.0 * p / delta) / n) + nu)


@dataclass(frozen=True)
class Support:
    indices: tuple
    threshold: float
    certified: bool


def threshold_support(xi_hat, k, lam, kappa, beta_min=None):
    """Keep coefficients strictly above a certified threshold.

    With ``r = 4 sqrt(k) lam / kappa`` the threshold is the midpoint of
    ``(r, beta_min - r)`` when that interval is nonempty; otherwise ``r``
    itself and the result is flagged uncertified.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    r = 4.0 * math.sqrt(k) * lam / kappa
    if beta_min is not None and beta_min - r > r:
        thr, certified = 0.5 * (r + beta_min - r), True
    else:
        thr, certified = r, False
    xi_hat = np.asarray(xi_hat)
    return Support(tuple(int(j) for j in np.flatnonzero(np.abs(xi_hat) > thr)), float(thr), certified)


def effect_support(A, xi_hat, rel=0.01):
    """Terms whose contribution ``|xi_j| |A_j|`` exceeds ``rel`` times the largest one."""
    contrib = np.abs(xi_hat) * np.sqrt((A * A).sum(axis=0))
    if contrib.max() <= 0:
        return ()
    return tuple(int(j) for j in np.flatnonzero(contrib > rel * contrib.max()))


def in_cone(delta, support, slack=0.0):
    mask = np.zeros(delta.shape[0], dtype=bool)
    mask[list(support)] = True
    return np.abs(delta[~mask]).sum() <= 3.0 * np.abs(delta[mask]).sum() + slack


def estimate_kappa(A, support, draws=10_000, rng=None, sparse_eig=True):
    """Restricted-eigenvalue estimate over the cone |D_Sc|_1 <= 3 |D_S|_1.

    Minimum of ``|A D|^2 / (n |D|^2)`` over every sign pattern on ``S`` with
    random cone-feasible tails, combined with the smallest eigenvalue of the
    Gram matrix over all index sets of size <= 2k.
    """
    A = np.asarray(A, dtype=float)
    n, p = A.shape
    gram = A.T @ A / n
    support = tuple(support)
    k = len(support)
    rng = np.random.default_rng(0) if rng is None else rng
    best = np.inf
    if k > 0:
        rest = [j for j in range(p) if j not in support]
        signs = np.array(list(product((-1.0, 1.0), repeat=k)))
        idx = np.arange(draws) % len(signs)
        D = np.zeros((draws, p))
        mags = np.where(np.arange(draws)[:, None] < len(signs), 1.0, rng.uniform(0.1, 1.0, (draws, k)))
        D[:, list(support)] = signs[idx] * mags
        if rest:
            tail = rng.laplace(size=(draws, len(rest)))
            tail /= np.abs(tail).sum(axis=1, keepdims=True)
            radius = 3.0 * np.abs(D[:, list(support)]).sum(axis=1) * rng.uniform(0.0, 1.0, draws)
            # half of the draws sit on the cone boundary
            radius[draws // 2:] = 3.0 * np.abs(D[draws // 2:, list(support)]).sum(axis=1)
            D[:, rest] = tail * radius[:, None]
        quad = np.einsum("ij,jk,ik->i", D, gram, D) / np.einsum("ij,ij->i", D, D)
        best = float(quad.min())
    if sparse_eig:
        s_max = min(p, max(2 * k, 1))
        for size in range(1, s_max + 1):
            for T in combinations(range(p), size):
                w = np.linalg.eigvalsh(gram[np.ix_(T, T)])[0]
                best = min(best, float(w))
    return max(best, 0.0)


def support_f1(pred, true):
    pred, true = set(pred), set(true)
    if not pred and not true:
        return 1.0
    return 2.0 * len(pred & true) / (len(pred) + len(true))


def recovery_metrics(xi_hat, S_hat, xi_true, S_true, A, constants_fn=None, constants_true=None):
    """Support F1, relative coefficient error, vector-field NRMSE and constant error.

    ``xi_hat``/``xi_true`` may be stacked over modes (2-D); ``A`` is then a
    list of per-mode designs.  ``S_hat``/``S_true`` are per-mode supports.
    """
    xi_hat = np.atleast_2d(xi_hat)
    xi_true = np.atleast_2d(xi_true)
    designs = A if isinstance(A, (list, tuple)) else [A]
    if len(S_hat) and not isinstance(S_hat[0], (tuple, list, set, frozenset)):
        S_hat, S_true = [S_hat], [S_true]
    f1 = float(np.mean([support_f1(a, b) for a, b in zip(S_hat, S_true)]))
    denom = np.linalg.norm(xi_true)
    coeff = float(np.linalg.norm(xi_hat - xi_true) / denom) if denom > 0 else float(np.linalg.norm(xi_hat))
    num, true_vf, rows = 0.0, [], 0
    for m, Am in enumerate(designs):
        if Am is None or Am.shape[0] == 0:
            continue
        num += float(np.sum((Am @ (xi_hat[m] - xi_true[m])) ** 2))
        true_vf.append(Am @ xi_true[m])
        rows += Am.shape[0]
    if rows:
        vf = np.concatenate(true_vf)
        span = float(np.ptp(vf)) or 1.0
        nrmse = math.sqrt(num / rows) / span
    else:
        nrmse = float("nan")
    const = float("nan")
    if constants_fn is not None:
        est = constants_fn(xi_hat)
        truth = constants_true if constants_true is not None else constants_fn(xi_true)
        errs = []
        for key, val in truth.items():
            e = est.get(key, float("nan"))
            errs.append(min(abs(e - val) / abs(val), 1.0) if np.isfinite(e) else 1.0)
        const = float(np.mean(errs))
    return {"support_f1": f1, "rel_coeff_err": coeff, "vf_nrmse": nrmse, "const_err": const}


@dataclass
class OracleReport:
    score: float
    score_gate: bool
    l2_error: float
    l2_bound: float
    pred_error: float
    pred_bound: float
    cone_ok: bool
    bound_ok: bool
    checked: bool


def oracle_check(xi_hat, xi_true, A, b, k, lam, kappa, raise_on_violation=True, tol=1e-9):
    """Check the Lasso oracle inequalities on a gated cell.

    The check only runs when the score condition ``|A^T zeta / n|_inf <= lam/2``
    holds for ``zeta = b - A xi_true``; otherwise it is reported as skipped.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    zeta = b - A @ xi_true
    score = float(np.abs(A.T @ zeta / n).max())
    delta = xi_hat - xi_true
    l2 = float(np.linalg.norm(delta))
    pred = float(np.sum((A @ delta) ** 2) / n)
    support = np.flatnonzero(xi_true)
    l2_bound = 4.0 * math.sqrt(k) * lam / kappa if kappa > 0 else math.inf
    pred_bound = 16.0 * k * lam**2 / kappa if kappa > 0 else math.inf
    gate = score <= lam / 2.0
    if not gate:
        return OracleReport(score, False, l2, l2_bound, pred, pred_bound, False, False, False)
    cone_ok = bool(in_cone(delta, support, slack=tol * max(1.0, np.abs(xi_true).sum())))
    l2_ok = l2 <= l2_bound * (1 + tol) + tol
    pred_ok = pred <= pred_bound * (1 + tol) + tol
    report = OracleReport(score, True, l2, l2_bound, pred, pred_bound, cone_ok, cone_ok and l2_ok and pred_ok, True)
    if raise_on_violation and not report.bound_ok:
        if not cone_ok:
            raise BoundViolationError("cone condition violated", "cone", float(np.abs(delta).sum()), None)
        if not l2_ok:
            raise BoundViolationError("l2 oracle bound violated", "l2_error", l2, l2_bound)
        raise BoundViolationError("prediction oracle bound violated", "pred_error", pred, pred_bound)
    return report


def perturbation_budget(A, xi_true, zeta_parts):
    """nu components |A^T u_q / n|_inf for each named residual part."""
    n = A.shape[0]
    return {name: float(np.abs(A.T @ u / n).max()) for name, u in zeta_parts.items()}


def bic_prune(A, b, support, penalty=1.0):
    """Backward elimination on least-squares refits.

    A term is dropped while removing it lowers ``n log(SSE/n) + penalty * |S| log n``.
    """
    n = A.shape[0]
    support = list(support)

    def sse(cols):
        if not cols:
            return float(b @ b)
        r = b - A[:, cols] @ least_squares(A[:, cols], b)
        return float(r @ r)

    cur = sse(support)
    while len(support) > 1:
        trials = [(sse([j for j in support if j != i]), i) for i in support]
        new, drop = min(trials)
        if cur <= 0 or n * math.log(max(new, 1e-300) / cur) < penalty * math.log(n):
            support.remove(drop)
            cur = new
        else:
            break
    return tuple(sorted(support))


@dataclass
class SparseFit:
    """One mode-conditioned fit.  ``A_fit``/``b_fit`` are the normalized rows used last."""

    xi: np.ndarray  # final coefficients, original scale
    support: tuple
    xi_lasso: np.ndarray  # Lasso estimate on the normalized design
    scale: np.ndarray
    lam: float
    sigma: float
    L_A: float
    A_fit: np.ndarray
    b_fit: np.ndarray
    trimmed: float

    def normalized_truth(self, xi_true):
        return np.asarray(xi_true) * self.scale


def _trim_rows(A, b, xi, d, cutoff):
    r = b - A @ xi
    mad = np.median(np.abs(r - np.median(r))) + 1e-12
    keep = np.abs(r) < cutoff * 1.4826 * mad
    # drop whole samples, not single coordinates
    return np.repeat(keep.reshape(-1, d).all(axis=1), d)


def sparse_fit(A, b, d, delta=0.05, sparse=True, trim=8.0, rel_threshold=0.02, bic_penalty=1.0, nu=0.0):
    """Normalized Lasso fit with robust trimming, support pruning and a least-squares refit.

    ``d`` is the number of stacked rows per sample.  With ``sparse=False`` the
    penalty is zero and no support selection takes place (dense fit).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.shape[0] == 0:
        raise EmptyInputError("empty design: no samples carry this mode label")
    scale = np.sqrt((A * A).mean(axis=0))
    scale = np.where(scale > 0, scale, 1.0)
    An = A / scale
    p = A.shape[1]

    def solve(Am, bm):
        sig = noise_scale(Am, bm)
        L = design_scale(Am)
        lam = choose_penalty(L, sig, p, Am.shape[0], delta, nu) if sparse else 0.0
        return lasso(Am, bm, lam) if sparse else least_squares(Am, bm), lam, sig, L

    xi, lam, sig, L = solve(An, b)
    keep = np.ones(len(b), dtype=bool)
    if trim:
        keep = _trim_rows(An, b, xi, d, trim)
        if keep.sum() >= p * d and not keep.all():
            xi, lam, sig, L = solve(An[keep], b[keep])
        else:
            keep[:] = True
    A2, b2 = An[keep], b[keep]
    if sparse:
        rms = math.sqrt(float(b2 @ b2) / len(b2))
        support = tuple(int(j) for j in np.flatnonzero(np.abs(xi) > rel_threshold * rms))
        if bic_penalty is not None and support:
            support = bic_prune(A2, b2, support, bic_penalty)
    else:
        support = tuple(int(j) for j in np.flatnonzero(xi))
    coef = np.zeros(p)
    if support:
        coef[list(support)] = least_squares(A2[:, list(support)], b2)
    return SparseFit(coef / scale, support, xi, scale, lam, sig, L, A2, b2, float(1.0 - keep.mean()))
