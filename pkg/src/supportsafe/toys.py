"""Small models with exact answers, used by the experiments and the oracles."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate, stats
from scipy.special import logsumexp

from .filtering import GaussianObservation, ProposalFamily, TransitionLaw, matrix_kernel


# ---------------------------------------------------------------------------
# one-step toys


@dataclass(frozen=True)
class GaussianToy:
    """Carrier N(0, 1), proposal N(mq, sq^2) and likelihood g(x) = N(o; x, sg^2)."""

    o: float = 1.0
    sg: float = 0.7
    mq: float = 0.8
    sq: float = 0.6

    @property
    def p(self):
        return stats.norm(0.0, 1.0)

    @property
    def q(self):
        return stats.norm(self.mq, self.sq)

    def log_g(self, x):
        return stats.norm.logpdf(self.o, loc=x, scale=self.sg)

    @property
    def Z(self):
        return float(stats.norm.pdf(self.o, 0.0, math.sqrt(1.0 + self.sg**2)))

    @property
    def rho(self):
        """E_P[g^2] / E_P[g]^2 in closed form."""
        m2 = stats.norm.pdf(self.o, 0.0, math.sqrt(1.0 + 0.5 * self.sg**2)) / math.sqrt(4 * math.pi * self.sg**2)
        return float(m2 / self.Z**2)

    def rho_quadrature(self):
        f1 = lambda x: math.exp(self.p.logpdf(x) + self.log_g(x))
        f2 = lambda x: math.exp(self.p.logpdf(x) + 2 * self.log_g(x))
        m1 = integrate.quad(f1, -np.inf, np.inf, epsabs=1e-13)[0]
        m2 = integrate.quad(f2, -np.inf, np.inf, epsabs=1e-13)[0]
        return m2 / m1**2

    def chi2(self, lam):
        """chi^2(Pi || Q_lam) by adaptive quadrature, Pi = g P / Z."""
        Z = self.Z

        def f(x):
            lp = self.p.logpdf(x)
            lq = np.logaddexp(math.log1p(-lam) + self.q.logpdf(x), math.log(lam) + lp) if lam < 1 else lp
            return math.exp(2 * (lp + self.log_g(x)) - lq) / Z**2

        return integrate.quad(f, -np.inf, np.inf, epsabs=1e-12, limit=200)[0] - 1.0


@dataclass(frozen=True)
class DiscreteToy:
    """Three states with enumerable carrier, proposal and likelihood."""

    p: tuple = (0.5, 0.3, 0.2)
    q: tuple = (0.7, 0.3, 0.0)  # no mass on state 3: support mismatch
    g: tuple = (0.2, 0.5, 1.5)

    def arrays(self):
        return np.array(self.p), np.array(self.q), np.array(self.g)

    @property
    def Z(self):
        p, _, g = self.arrays()
        return float(p @ g)

    @property
    def rho(self):
        p, _, g = self.arrays()
        return float(p @ g**2 / (p @ g) ** 2)

    def chi2(self, lam):
        p, q, g = self.arrays()
        ql = (1 - lam) * q + lam * p
        pi = g * p / self.Z
        keep = pi > 0
        return float((pi[keep] ** 2 / ql[keep]).sum() - 1.0)

    def sampler(self, which):
        probs = np.array(self.p if which == "p" else self.q)

        def draw(rng, n):
            return rng.choice(3, size=n, p=probs)

        return draw

    def log_density(self, which):
        probs = np.array(self.p if which == "p" else self.q)
        with np.errstate(divide="ignore"):
            logs = np.log(probs)
        return lambda x: logs[np.asarray(x)]


# ---------------------------------------------------------------------------
# bimodal contact toy (Exp1)


@dataclass(frozen=True)
class ContactToy:
    """1-D position with a free branch (drift +v) and a contact branch (drift -v).

    Observations are noisy positions.  The base proposal shares the carrier
    structure but, with ``dropout[1] = 1``, never proposes the contact branch.
    """

    v: float = 1.0
    sigma_p: float = 0.3
    sigma_o: float = 0.3
    p_enter: float = 0.05
    p_leave: float = 0.02
    sharpen: float = 0.5
    contact_dropout: float = 1.0

    @property
    def switch(self):
        return np.array([[1 - self.p_enter, self.p_enter], [self.p_leave, 1 - self.p_leave]])

    @property
    def drifts(self):
        return np.array([self.v, -self.v])

    def law(self):
        drifts = self.drifts
        covs = np.full((2, 1, 1), self.sigma_p**2)
        return TransitionLaw(matrix_kernel(self.switch), lambda m, z, a: z + drifts[m], covs)

    def smooth_law(self):
        """Single-mode baseline with the moment-matched step variance."""
        covs = np.full((1, 1, 1), self.sigma_p**2 + self.v**2)
        return TransitionLaw(matrix_kernel([[1.0]]), lambda m, z, a: z.copy(), covs)

    def obs_model(self):
        return GaussianObservation(np.eye(1), np.array([[self.sigma_o**2]]))

    def proposal(self, single_mode=False):
        drop = () if single_mode else (0.0, self.contact_dropout)
        return ProposalFamily(pull=1.0, sharpen=self.sharpen, dropout=drop)

    def simulate(self, T, rng):
        modes = np.empty(T, dtype=int)
        z = np.empty(T)
        P = self.switch
        s, x = int(rng.random() < P[0, 1] / (P[0, 1] + P[1, 0])), 0.0
        for t in range(T):
            if rng.random() < P[s, 1 - s]:
                s = 1 - s
            x = x + self.drifts[s] + self.sigma_p * rng.standard_normal()
            modes[t], z[t] = s, x
        obs = z + self.sigma_o * rng.standard_normal(T)
        return modes, z[:, None], obs[:, None]


# ---------------------------------------------------------------------------
# exact discrete HMM (mode decoding and forward oracles)


@dataclass(frozen=True)
class HMMToy:
    """Modes with emission N(level_s, sigma^2); the continuous state is the level itself.

    As a hybrid model the state jumps to ``level[s'] + tiny noise`` so the
    particle filter targets exactly this HMM.
    """

    levels: tuple = (0.0, 1.0)
    sigma: float = 0.6
    stay: float = 0.9
    jitter: float = 1e-3

    @property
    def M(self):
        return len(self.levels)

    @property
    def switch(self):
        M = self.M
        P = np.full((M, M), (1 - self.stay) / max(M - 1, 1))
        np.fill_diagonal(P, self.stay if M > 1 else 1.0)
        return P

    def law(self):
        lv = np.asarray(self.levels, dtype=float)
        covs = np.full((self.M, 1, 1), self.jitter**2)
        return TransitionLaw(matrix_kernel(self.switch), lambda m, z, a: np.full_like(z, lv[m]), covs)

    def obs_model(self):
        # emission noise minus the state jitter so the marginal emission is exact
        return GaussianObservation(np.eye(1), np.array([[self.sigma**2 - self.jitter**2]]))

    def simulate(self, T, rng, s0=None):
        P = self.switch
        s = int(rng.integers(self.M)) if s0 is None else s0
        modes = np.empty(T, dtype=int)
        for t in range(T):
            s = int(rng.choice(self.M, p=P[s]))
            modes[t] = s
        obs = np.asarray(self.levels)[modes] + self.sigma * rng.standard_normal(T)
        return modes, obs[:, None]

    def forward(self, obs, prior=None, mask=None):
        """Filtered mode posteriors p(s_t | o_<=t) (missing where ``mask`` is False)."""
        T = len(obs)
        P = self.switch
        logP = np.log(P)
        with np.errstate(divide="ignore"):
            alpha = np.log(np.full(self.M, 1.0 / self.M) if prior is None else np.asarray(prior, dtype=float))
        out = np.empty((T, self.M))
        lv = np.asarray(self.levels)
        for t in range(T):
            alpha = logsumexp(alpha[:, None] + logP, axis=0)
            if mask is None or mask[t]:
                alpha = alpha + stats.norm.logpdf(obs[t, 0], lv, self.sigma)
            alpha = alpha - logsumexp(alpha)
            out[t] = np.exp(alpha)
        return out


# ---------------------------------------------------------------------------
# multi-regime toy (Exp2)


@dataclass(frozen=True)
class RegimeToy:
    """Object pushed through regimes with speeds ``speeds`` (static, slip, impact-like).

    Records object and end-effector positions plus actions, so kinematic proxy
    labels can be built from the logged fields alone.
    """

    speeds: tuple = (0.0, 1.0, 4.0)
    sigma_p: float = 0.15
    sigma_o: float = 0.25
    dwell: tuple = (26, 10, 4)  # mean dwell time per regime (steps)
    sharpen: float = 0.5

    @property
    def M(self):
        return len(self.speeds)

    @property
    def switch(self):
        M = self.M
        P = np.zeros((M, M))
        for m, dw in enumerate(self.dwell):
            P[m] = (1.0 / dw) / (M - 1)
            P[m, m] = 1.0 - 1.0 / dw
        return P

    def law(self):
        sp = np.asarray(self.speeds, dtype=float)
        covs = np.full((self.M, 1, 1), self.sigma_p**2)
        return TransitionLaw(matrix_kernel(self.switch), lambda m, z, a: z + sp[m], covs)

    def obs_model(self):
        return GaussianObservation(np.eye(1), np.array([[self.sigma_o**2]]))

    def proposal(self, dropout=()):
        return ProposalFamily(pull=1.0, sharpen=self.sharpen, dropout=dropout)

    def simulate(self, T, rng):
        P = self.switch
        sp = np.asarray(self.speeds)
        modes = np.empty(T, dtype=int)
        z = np.empty(T)
        s, x = 0, 0.0
        for t in range(T):
            s = int(rng.choice(self.M, p=P[s]))
            x = x + sp[s] + self.sigma_p * rng.standard_normal()
            modes[t], z[t] = s, x
        obs = z + self.sigma_o * rng.standard_normal(T)
        # end effector trails the object; the action is its commanded velocity
        ee = z - 0.05 + 0.02 * rng.standard_normal(T)
        act = np.concatenate([[0.0], np.diff(ee)])
        return {"modes": modes, "z": z[:, None], "obs": obs[:, None],
                "p_obj": z[:, None], "p_ee": ee[:, None], "a": act[:, None]}
