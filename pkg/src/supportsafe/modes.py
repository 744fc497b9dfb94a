"""Clamped-mode posteriors, concentration bounds and per-step mode decoding."""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class ModeEvidence:
    """Accumulated evidence for one constant-mode segment.

    ``log_ratios[s] = log(pi_s / pi_m) + sum_l (l_{l,s} - l_{l,m})`` relative to
    the reference mode ``m`` (the segment's true mode when known, else the MAP).
    """

    priors: np.ndarray
    log_liks: np.ndarray  # (L, M)
    cumulative: np.ndarray  # (M,)
    posterior: np.ndarray  # (M,)
    reference: int
    log_ratios: np.ndarray

    @property
    def M(self):
        return len(self.priors)

    @property
    def L(self):
        return self.log_liks.shape[0]

    def wrong_mass(self, mode=None):
        m = self.reference if mode is None else mode
        return float(1.0 - self.posterior[m])


def accumulate_evidence(log_liks, priors, reference=None):
    """Posterior ``Pi_L(s) ~ pi_s exp(sum_l l_{l,s})`` by log-sum-exp."""
    priors = np.asarray(priors, dtype=float)
    if np.any(priors <= 0):
        raise ValueError("priors must be strictly positive")
    priors = priors / priors.sum()
    ll = np.asarray(log_liks, dtype=float).reshape(-1, len(priors))
    if not np.all(np.isfinite(ll)):
        raise ValueError("log-likelihoods must be finite")
    cum = ll.sum(axis=0)
    logpost = np.log(priors) + cum
    post = np.exp(logpost - logsumexp(logpost))
    m = int(np.argmax(post)) if reference is None else int(reference)
    ratios = logpost - logpost[m]
    return ModeEvidence(priors, ll, cum, post, m, ratios)


def concentration_bound(gamma, V, B, delta):
    """Sharp bound from per-wrong-mode separation ``gamma``, variance proxy ``V`` and prior log-odds ``B``.

    Returns ``(A_sharp, sharp_bound)`` with ``u_s = sqrt(2 V_s log((M-1)/delta))``.
    The arrays run over the ``M - 1`` wrong modes.
    """
    gamma, V, B = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (gamma, V, B))
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if np.any(V < 0):
        raise ValueError("variance proxies must be >= 0")
    k = len(gamma)
    u = np.sqrt(2.0 * V * math.log(k / delta))
    expo = B - gamma + u
    with np.errstate(over="ignore"):
        A = float(np.exp(expo).sum())
    sharp = 1.0 if math.isinf(A) else A / (1.0 + A)
    return A, sharp


def simple_bound(M, L, B, Delta, sigma, delta):
    """(M-1) exp(B - L Delta + sigma sqrt(2 L log((M-1)/delta))) under uniform constants."""
    k = M - 1
    log_term = math.log(k / delta)
    with np.errstate(over="ignore"):
        return float(k * np.exp(B - L * Delta + sigma * math.sqrt(2.0 * L * log_term)))


def bounds_report(gamma, V, B, delta, M=None, L=None, Delta=None, sigma=None):
    A, sharp = concentration_bound(gamma, V, B, delta)
    out = {"A_sharp": A, "sharp_bound": sharp}
    if None not in (M, L, Delta, sigma):
        out["simple_bound"] = simple_bound(M, L, float(np.max(B)), Delta, sigma, delta)
    return out


def variational_transfer(sharp_bound, eps_q):
    """Bound for an approximate mode posterior within KL ``eps_q`` of the exact one."""
    if eps_q < 0:
        raise ValueError("eps_q must be >= 0")
    return min(1.0, sharp_bound + math.sqrt(eps_q / 2.0))


def decode_modes(posteriors):
    """Per-step MAP labels from weighted mode marginals (ties go to the smallest index)."""
    P = np.atleast_2d(np.asarray(posteriors, dtype=float))
    return np.argmax(P, axis=1), P


def ensemble_posteriors(history_modes, history_weights, M):
    """Weighted mode marginals ``q(s | o_<=t) = sum_i w_i 1{s_i = s}`` per step."""
    out = np.zeros((len(history_modes), M))
    for t, (s, w) in enumerate(zip(history_modes, history_weights)):
        out[t] = np.bincount(s, weights=w, minlength=M)[:M]
        out[t] /= out[t].sum()
    return out


# ---------------------------------------------------------------------------
# closed-form segment models


@dataclass(frozen=True)
class GaussianSegments:
    """Observations N(mu_s, sigma^2) within a constant-mode segment."""

    mus: tuple = (0.0, 0.5, 1.0)
    sigma: float = 1.0

    @property
    def M(self):
        return len(self.mus)

    def per_step(self, m):
        """(Gamma/L, V/L) for every wrong mode of true mode m."""
        mu = np.asarray(self.mus)
        d = np.delete(mu - mu[m], m)
        return d**2 / (2 * self.sigma**2), d**2 / self.sigma**2

    def log_liks(self, y):
        mu = np.asarray(self.mus)
        return -0.5 * ((y[..., None] - mu) / self.sigma) ** 2 - math.log(self.sigma) - 0.5 * math.log(2 * math.pi)

    def sample(self, m, L, rng, size=()):
        return self.mus[m] + self.sigma * rng.standard_normal(size + (L,))


@dataclass(frozen=True)
class BernoulliSegments:
    """Binary observations with mode-dependent success probability."""

    thetas: tuple = (0.3, 0.5, 0.7)

    @property
    def M(self):
        return len(self.thetas)

    def per_step(self, m):
        th = np.asarray(self.thetas)
        t0 = th[m]
        others = np.delete(th, m)
        kl = t0 * np.log(t0 / others) + (1 - t0) * np.log((1 - t0) / (1 - others))
        # increments lie in an interval of width |a - b|: Hoeffding variance proxy
        width = np.abs(np.log(others / t0) - np.log((1 - others) / (1 - t0)))
        return kl, width**2 / 4.0

    def log_liks(self, y):
        th = np.asarray(self.thetas)
        return np.where(y[..., None] > 0, np.log(th), np.log1p(-th))

    def sample(self, m, L, rng, size=()):
        return (rng.random(size + (L,)) < self.thetas[m]).astype(float)


def segment_bounds(model, m, L, priors, delta):
    """Closed-form (Gamma, V, B) for a length-L segment of true mode m and the sharp bound."""
    g1, v1 = model.per_step(m)
    pri = np.asarray(priors, dtype=float)
    B = np.log(np.delete(pri, m) / pri[m])
    A, sharp = concentration_bound(L * g1, L * v1, B, delta)
    return {"gamma": L * g1, "V": L * v1, "B": B, "A_sharp": A, "sharp_bound": sharp}
