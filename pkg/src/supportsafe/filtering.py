"""Defensive-mixture particle filtering for hybrid (mode, state) particles.

One step draws every particle from ``(1 - lam) Q_i + lam P_i`` where ``P_i``
is the model transition out of particle ``i`` (the carrier) and ``Q_i`` the
base proposal, then weighs it with the same mixture density.  ``lam`` is
fixed before any particle of the step is drawn.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import logsumexp

from .errors import AllZeroWeightsError, InvalidCertificateError

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# lambda rule and bound calculators


@dataclass(frozen=True)
class LambdaDecision:
    lam: float
    certified: bool
    lambda_min: float


def select_lambda(rho_bar, n, tau, lambda_fb):
    """Smallest certified defensive weight, or the fallback when it exceeds 1."""
    if not rho_bar >= 1.0:
        raise InvalidCertificateError(f"certificate rho_bar={rho_bar!r} < 1 is impossible")
    if n < 1 or not tau > 0 or not 0.0 < lambda_fb <= 1.0:
        raise ValueError("need n >= 1, tau > 0 and lambda_fb in (0, 1]")
    lmin = rho_bar / (1.0 + n * tau * tau)
    if lmin <= 1.0:
        return LambdaDecision(float(lmin), True, float(lmin))
    return LambdaDecision(float(lambda_fb), False, float(lmin))


def theory_bounds(rho, lam, n):
    """chi-square bound, relative-variance bound and ESS floor for one step."""
    if rho < 1 or not 0.0 < lam <= 1.0:
        raise ValueError("need rho >= 1 and lam in (0, 1]")
    chi2 = rho / lam - 1.0
    return {"chi2_bound": chi2, "rel_var_bound": chi2 / n, "ess_floor": lam / rho}


# ---------------------------------------------------------------------------
# generic defensive sampling and weighting


def mixture_log_density(log_q, log_p, lam):
    """log((1 - lam) q + lam p) from log densities."""
    log_q = np.asarray(log_q, dtype=float)
    log_p = np.asarray(log_p, dtype=float)
    if lam >= 1.0:
        return log_p.copy()
    if lam <= 0.0:
        return log_q.copy()
    return np.logaddexp(math.log1p(-lam) + log_q, math.log(lam) + log_p)


def defensive_log_density(x, q, p, lam):
    """log q_lam(x) for distributions exposing ``logpdf``."""
    if not 0.0 < lam <= 1.0:
        raise ValueError("lam must lie in (0, 1]")
    return mixture_log_density(q.logpdf(x), p.logpdf(x), lam)


@dataclass(frozen=True)
class DefensiveDraw:
    """Samples plus the lambda they were drawn with (component flags are diagnostics only)."""

    samples: object
    lam: float
    from_carrier: np.ndarray


def _sampler(obj):
    if hasattr(obj, "rvs"):
        return lambda rng, n: obj.rvs(size=n, random_state=rng)
    if hasattr(obj, "sample"):
        return obj.sample
    return obj


def _select(mask, a, b):
    if isinstance(a, tuple):
        return tuple(_select(mask, x, y) for x, y in zip(a, b))
    a = np.asarray(a)
    m = mask.reshape(mask.shape + (1,) * (a.ndim - 1))
    return np.where(m, np.asarray(b), a)


def sample_defensive(q, p, lam, n, rng):
    """Draw ``n`` samples, each from ``p`` with probability ``lam`` and from ``q`` otherwise.

    ``q``/``p`` may be scipy frozen distributions, objects with
    ``sample(rng, n)`` or plain callables ``f(rng, n)``.  Both components are
    drawn for every slot so the random stream does not depend on ``lam``.
    ``lam = 0`` draws from ``q`` only (the non-defensive ablation).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    flags = rng.random(n) < lam
    xq = _sampler(q)(rng, n)
    xp = _sampler(p)(rng, n)
    return DefensiveDraw(_select(flags, xq, xp), float(lam), flags)


@dataclass(frozen=True)
class WeightResult:
    log_w: np.ndarray  # incremental log weights log W_i
    log_weights: np.ndarray  # normalized log weights after the update
    log_zhat: float
    zhat: float
    ess_over_n: float
    rel_weight_var: float
    max_ratio: float  # largest p/q_lam among the draws


def ess(weights):
    w = np.asarray(weights, dtype=float)
    s2 = float(w @ w)
    if s2 == 0.0:
        return 0.0
    return float(w.sum()) ** 2 / s2


def one_step_weights(draw, log_g, log_p, log_q, prev_log_weights=None):
    """Importance weights ``W_i = g p / q_lam`` with the draw's own lambda.

    ``log_g`` may be ``None`` for a missing observation.  With previous
    normalized log weights ``w``, ``Zhat = sum_i w_i W_i`` and the ESS is
    taken on the updated weights ``w_i W_i``; otherwise ``Zhat = mean(W)``.
    """
    lam = draw.lam
    log_p = np.asarray(log_p, dtype=float)
    n = log_p.shape[0]
    log_qlam = mixture_log_density(log_q, log_p, lam)
    log_ratio = log_p - log_qlam
    log_w = log_ratio if log_g is None else np.asarray(log_g, dtype=float) + log_ratio
    if prev_log_weights is None:
        prev = np.full(n, -math.log(n))
    else:
        prev = np.asarray(prev_log_weights, dtype=float)
    upd = prev + log_w
    if not np.any(np.isfinite(upd)) or np.all(upd == -np.inf):
        raise AllZeroWeightsError("every importance weight is zero")
    log_zhat = float(logsumexp(upd))
    norm = upd - log_zhat
    w = np.exp(norm)
    e = ess(w)
    # relative weight variance with population moments: N/ESS - 1
    mean = w.mean()
    rel = float(((w - mean) ** 2).mean() / mean**2)
    finite = np.isfinite(log_ratio)
    max_ratio = float(np.exp(log_ratio[finite].max())) if finite.any() else 0.0
    return WeightResult(log_w, norm, log_zhat, math.exp(log_zhat), e / n, rel, max_ratio)


# ---------------------------------------------------------------------------
# Gaussian-mixture transition laws over hybrid particles


def _gauss_logpdf(x, mean, chol):
    """log N(x; mean, L L^T) for rows of x (n, d) with a shared or per-row chol."""
    diff = x - mean
    if chol.ndim == 2:
        sol = np.linalg.solve(chol, diff.T).T
        logdet = 2.0 * np.log(np.diag(chol)).sum()
    else:
        sol = np.linalg.solve(chol, diff[..., None])[..., 0]
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
    d = x.shape[-1]
    return -0.5 * (np.einsum("...i,...i->...", sol, sol) + logdet + d * LOG_2PI)


@dataclass(frozen=True)
class HybridMixture:
    """Per-particle mixture over modes: ``sum_m w[i, m] N(mean[i, m], cov[m])``."""

    weights: np.ndarray  # (N, M), rows sum to 1
    means: np.ndarray  # (N, M, d)
    covs: np.ndarray  # (M, d, d)

    @property
    def chols(self):
        return np.linalg.cholesky(self.covs)

    def sample(self, rng, n=None):
        N, M, d = self.means.shape
        u = 1.0 - rng.random(N)
        cw = np.cumsum(self.weights, axis=1)
        cw = cw / cw[:, -1:]
        modes = np.minimum((u[:, None] > cw).sum(axis=1), M - 1)
        eps = rng.standard_normal((N, d))
        L = self.chols[modes]
        z = self.means[np.arange(N), modes] + np.einsum("nij,nj->ni", L, eps)
        return modes, z

    def logpdf(self, x):
        modes, z = x
        N = z.shape[0]
        idx = np.arange(N)
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights[idx, modes])
        return lw + _gauss_logpdf(z, self.means[idx, modes], self.chols[modes])


@dataclass(frozen=True)
class TransitionLaw:
    """Carrier: mode kernel ``kernel(s, z, a) -> (N, M)`` and Gaussian moves.

    ``mean(m, z, a)`` gives the mode-``m`` one-step mean; ``covs`` (M, d, d)
    already contains the noise floor.
    """

    kernel: object
    mean: object
    covs: np.ndarray

    @property
    def mode_count(self):
        return self.covs.shape[0]

    def carrier(self, modes, states, action):
        N = states.shape[0]
        M = self.mode_count
        w = np.asarray(self.kernel(modes, states, action), dtype=float)
        if w.shape != (N, M):
            raise ValueError("mode kernel must return an (N, M) matrix")
        means = np.stack([self.mean(m, states, action) for m in range(M)], axis=1)
        return HybridMixture(w, means, self.covs)


def matrix_kernel(P):
    """Mode kernel from a fixed row-stochastic matrix."""
    P = np.asarray(P, dtype=float)
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("mode transition matrix must be row-stochastic")
    return lambda s, z, a: P[np.asarray(s)]


def system_law(spec, switch_matrix, noise_floor=1e-6):
    """Euler transition law of a hybrid pH system with a fixed switching matrix."""
    from .systems import vector_field

    dt = spec.dt
    d = spec.state_dim
    covs = spec.Sigma * dt + noise_floor * np.eye(d)

    def mean(m, z, a):
        a = np.broadcast_to(np.atleast_2d(np.asarray(a, dtype=float)), (z.shape[0], spec.input_dim))
        return z + dt * vector_field(spec, z, m, a)

    return TransitionLaw(matrix_kernel(switch_matrix), mean, covs)


@dataclass(frozen=True)
class GaussianObservation:
    """g(z) = N(o; H z, R)."""

    H: np.ndarray
    R: np.ndarray

    def log_lik(self, z, o):
        chol = np.linalg.cholesky(self.R)
        return _gauss_logpdf(np.broadcast_to(o, (z.shape[0], len(o))), z @ self.H.T, chol)


@dataclass(frozen=True)
class ProposalFamily:
    """Base proposal built from the carrier.

    With an observation, mode mass is reweighted by each branch's predictive
    likelihood (``mode_update``) and component means are pulled toward the
    observation with precision scaled by ``pull`` (0 disables it).
    ``sharpen`` multiplies the proposal covariances.  ``dropout[m]`` removes
    that fraction of mode ``m``'s mass; by default only on steps without an
    observation, i.e. where the branch is hidden.
    """

    pull: float = 1.0
    sharpen: float = 1.0
    dropout: tuple = ()
    mode_update: bool = True
    dropout_observed: bool = False

    def build(self, carrier, obs_model, o):
        with np.errstate(divide="ignore"):
            logw = np.log(carrier.weights)
        means = carrier.means
        covs = carrier.covs
        if o is not None:
            H = obs_model.H
            if self.mode_update:
                S = np.einsum("ij,mjk,lk->mil", H, covs, H) + obs_model.R
                ym = np.einsum("rj,nmj->nmr", H, means)
                lik = _gauss_logpdf(np.broadcast_to(o, ym.shape), ym, np.linalg.cholesky(S)[None])
                logw = logw + lik
            if self.pull > 0:
                R = obs_model.R / self.pull
                S = np.einsum("ij,mjk,lk->mil", H, covs, H) + R
                K = np.einsum("mij,kj,mkl->mil", covs, H, np.linalg.inv(S))  # (M, d, r)
                innov = o[None, None, :] - np.einsum("rj,nmj->nmr", H, means)
                means = means + np.einsum("mdr,nmr->nmd", K, innov)
                covs = covs - np.einsum("mdr,rj,mjk->mdk", K, H, covs)
                covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        if len(self.dropout) and (o is None or self.dropout_observed):
            with np.errstate(divide="ignore"):
                keep = np.log1p(-np.minimum(np.asarray(self.dropout, dtype=float), 1.0))
            cand = logw + keep[None, :]
            dead = np.all(cand == -np.inf, axis=1)
            logw = np.where(dead[:, None], logw, cand)
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        w = w / w.sum(axis=1, keepdims=True)
        return HybridMixture(w, means, self.sharpen * covs)


# ---------------------------------------------------------------------------
# certificate


def _hermite_nodes(r, n_nodes):
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    grids = np.meshgrid(*([x] * r), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.ones(nodes.shape[0])
    for wg in np.meshgrid(*([w] * r), indexing="ij"):
        weights = weights * wg.ravel()
    return nodes, weights


def log_gaussian_moments_closed_form(comp_w, means, covs, o, R):
    """log E[g] and log E[g^2] for g(y) = N(o; y, R) under sum_k comp_w[k] N(means[k], covs[k])."""
    lw = np.log(comp_w)
    obs = np.broadcast_to(o, means.shape)
    l1 = _gauss_logpdf(obs, means, np.linalg.cholesky(covs + R[None]))
    l2 = _gauss_logpdf(obs, means, np.linalg.cholesky(covs + 0.5 * R[None]))
    l2 = l2 - 0.5 * math.log(np.linalg.det(4.0 * math.pi * R))
    return float(logsumexp(lw + l1)), float(logsumexp(lw + l2))


def log_gaussian_moments_quadrature(comp_w, means, covs, o, R, n_nodes=None):
    """Gauss-Hermite version of :func:`log_gaussian_moments_closed_form`."""
    r = len(o)
    if n_nodes is None:
        n_nodes = {1: 48, 2: 32}.get(r, 8)
    nodes, nw = _hermite_nodes(r, n_nodes)
    L = np.linalg.cholesky(covs)  # (K, r, r)
    pts = means[:, None, :] + np.einsum("kij,qj->kqi", L, nodes)  # (K, Q, r)
    K, Q = pts.shape[:2]
    lg = _gauss_logpdf(pts.reshape(-1, r), np.broadcast_to(o, (K * Q, r)), np.linalg.cholesky(R))
    lg = lg.reshape(K, Q)
    lw = np.log(comp_w)[:, None] + np.log(nw)[None, :]
    return float(logsumexp(lw + lg)), float(logsumexp(lw + 2.0 * lg))


def certificate_rho(carrier, prev_weights, obs_model, o, inflation=1.05, quadrature=True):
    """Pre-sampling certificate ``rho_bar = inflation * E_P[g^2] / E_P[g]^2``."""
    if o is None:
        return inflation * 1.0
    H = obs_model.H
    N, M, _ = carrier.means.shape
    comp_w = (prev_weights[:, None] * carrier.weights).ravel()
    ymeans = np.einsum("rj,nmj->nmr", H, carrier.means).reshape(N * M, -1)
    ycov = np.einsum("ij,mjk,lk->mil", H, carrier.covs, H)
    ycovs = np.broadcast_to(ycov[None], (N, M) + ycov.shape[1:]).reshape(N * M, *ycov.shape[1:])
    keep = comp_w > 0
    fn = log_gaussian_moments_quadrature if quadrature and len(o) <= 2 else log_gaussian_moments_closed_form
    l1, l2 = fn(comp_w[keep], ymeans[keep], ycovs[keep], np.asarray(o, dtype=float), obs_model.R)
    if not np.isfinite(l1):
        return math.inf
    return inflation * max(math.exp(min(l2 - 2.0 * l1, 700.0)), 1.0)


# ---------------------------------------------------------------------------
# ensemble, resampling and the filtering step


@dataclass(frozen=True)
class DefensiveConfig:
    n_particles: int = 100
    tau: float = 0.3
    lambda_fb: float = 1.0
    ess_trigger: float = 0.5
    proposal: ProposalFamily = field(default_factory=ProposalFamily)
    lambda_policy: str = "certified"  # or "fixed"
    lambda_fixed: float = 0.5
    inflation: float = 1.05
    replications: int = 0  # extra proposal replications for the empirical relative variance

    def __post_init__(self):
        if self.n_particles < 2 or not self.tau > 0 or not 0.0 < self.lambda_fb <= 1.0:
            raise ValueError("need N >= 2, tau > 0 and lambda_fb in (0, 1]")
        if self.lambda_policy not in ("certified", "fixed"):
            raise ValueError("lambda_policy must be 'certified' or 'fixed'")
        if self.lambda_policy == "fixed" and not 0.0 <= self.lambda_fixed <= 1.0:
            raise ValueError("lambda_fixed must lie in [0, 1]")


@dataclass
class StepDiagnostics:
    t: int
    lam: float
    certified: bool
    lambda_min: float
    rho_bar: float
    ess_over_n: float
    rel_weight_var: float
    zhat: float
    log_zhat: float
    resampled: bool
    emp_rel_var: float = float("nan")
    max_ratio: float = 0.0


@dataclass
class ParticleEnsemble:
    modes: np.ndarray
    states: np.ndarray
    log_weights: np.ndarray
    history: list = field(default_factory=list)
    posteriors: list = field(default_factory=list)  # per-step weighted mode marginals

    @classmethod
    def initial(cls, modes, states):
        n = len(modes)
        return cls(np.asarray(modes, dtype=int).copy(), np.asarray(states, dtype=float).copy(),
                   np.full(n, -math.log(n)))

    @property
    def size(self):
        return len(self.modes)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def mode_marginal(self, M):
        return np.bincount(self.modes, weights=self.weights, minlength=M)[:M]


def systematic_resample(weights, rng):
    """Offspring indices by systematic resampling."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    cw = np.cumsum(w / w.sum())
    cw[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cw, u, side="right").clip(0, n - 1)


def resample(ensemble, rng):
    idx = systematic_resample(ensemble.weights, rng)
    ensemble.modes = ensemble.modes[idx]
    ensemble.states = ensemble.states[idx]
    ensemble.log_weights = np.full(ensemble.size, -math.log(ensemble.size))
    return ensemble


def _decide(cfg, rho_bar, n):
    if cfg.lambda_policy == "fixed":
        lmin = rho_bar / (1.0 + n * cfg.tau**2) if np.isfinite(rho_bar) else math.inf
        return LambdaDecision(float(cfg.lambda_fixed), False, float(lmin))
    if not np.isfinite(rho_bar):
        return LambdaDecision(cfg.lambda_fb, False, math.inf)
    return select_lambda(rho_bar, n, cfg.tau, cfg.lambda_fb)


def _weigh(carrier, proposal, decision, obs_model, o, prev, rng):
    draw = sample_defensive(proposal, carrier, decision.lam, carrier.weights.shape[0], rng)
    log_p = carrier.logpdf(draw.samples)
    log_q = proposal.logpdf(draw.samples)
    log_g = None if o is None else obs_model.log_lik(draw.samples[1], o)
    return draw, one_step_weights(draw, log_g, log_p, log_q, prev)


def filter_step(ensemble, action, observation, cfg, law, obs_model, rng, t=None):
    """One support-safe step; mutates ``ensemble`` and returns its diagnostics.

    ``observation`` is ``None`` when missing, in which case ``g = 1``.
    """
    o = None if observation is None else np.asarray(observation, dtype=float)
    if o is not None and not np.all(np.isfinite(o)):
        o = None
    prev = ensemble.log_weights
    carrier = law.carrier(ensemble.modes, ensemble.states, action)
    proposal = cfg.proposal.build(carrier, obs_model, o)
    rho_bar = certificate_rho(carrier, np.exp(prev), obs_model, o, cfg.inflation)
    decision = _decide(cfg, rho_bar, ensemble.size)

    emp = float("nan")
    if cfg.replications > 1:
        rep_rng = np.random.default_rng(rng.integers(2**63))
        z = []
        for _ in range(cfg.replications):
            _, res = _weigh(carrier, proposal, decision, obs_model, o, prev, rep_rng)
            z.append(res.log_zhat)
        z = np.exp(np.asarray(z) - max(z))
        emp = float(z.var(ddof=1) / z.mean() ** 2)

    draw, res = _weigh(carrier, proposal, decision, obs_model, o, prev, rng)
    ensemble.modes, ensemble.states = draw.samples
    ensemble.log_weights = res.log_weights
    ensemble.posteriors.append(ensemble.mode_marginal(law.mode_count))
    resampled = res.ess_over_n < cfg.ess_trigger
    if resampled:
        resample(ensemble, rng)
    diag = StepDiagnostics(
        t=len(ensemble.history) if t is None else t, lam=decision.lam, certified=decision.certified,
        lambda_min=decision.lambda_min, rho_bar=float(rho_bar), ess_over_n=res.ess_over_n,
        rel_weight_var=res.rel_weight_var, zhat=res.zhat, log_zhat=res.log_zhat,
        resampled=bool(resampled), emp_rel_var=emp, max_ratio=res.max_ratio,
    )
    ensemble.history.append(diag)
    return ensemble, diag


def predictive_moments(ensemble, law, action, obs_model):
    """Moment-matched Gaussian predictive of the next observation."""
    carrier = law.carrier(ensemble.modes, ensemble.states, action)
    w = ensemble.weights[:, None] * carrier.weights  # (N, M)
    H = obs_model.H
    ym = np.einsum("rj,nmj->nmr", H, carrier.means)
    mean = np.einsum("nm,nmr->r", w, ym)
    dev = ym - mean
    cov = np.einsum("nm,nmr,nms->rs", w, dev, dev)
    cov = cov + np.einsum("m,mij->ij", w.sum(axis=0), np.einsum("ij,mjk,lk->mil", H, carrier.covs, H))
    return mean, cov + obs_model.R


DIAGNOSTIC_HEADER = ["t", "lambda", "certified", "ess_n", "rel_wvar", "zhat", "log_zhat"]


def diagnostic_rows(history):
    return [[d.t, d.lam, d.certified, d.ess_over_n, d.rel_weight_var, d.zhat, d.log_zhat] for d in history]
