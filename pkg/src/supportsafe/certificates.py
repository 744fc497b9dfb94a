"""Energy, transfer and Monte Carlo margin calculators plus a simulation-side energy check."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import linalg

from .errors import AssumptionUnmetError
from .systems import Trajectory, energy


@dataclass(frozen=True)
class CertificateInputs:
    r: float = 1.0
    mu: float = 1.0
    g: float = 0.0
    A: float = 0.0
    L_H: float = 1.0
    nu2: float = 0.0
    T: float = 1.0
    U0: float = 0.0
    eps_H: float = 0.0
    C_max: float = 1.0
    eta_opt: float = 0.0
    delta: float = 0.05
    beta: float = 0.05
    n: int = 1
    L: int = 1
    B: float = 1.0

    def __post_init__(self):
        for name in ("r", "mu", "g", "A", "L_H", "nu2", "T", "U0", "eps_H", "C_max", "eta_opt", "B"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        for name in ("delta", "beta"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


def energy_bound(inp):
    """Gronwall bound on E[U] at horizon T and the Markov tail P(U_T >= B)."""
    if inp.r <= 0 or inp.mu <= 0:
        raise ValueError("need r > 0 and mu > 0")
    alpha = inp.r * inp.mu
    C_E = inp.g**2 * inp.A**2 / (2.0 * inp.r) + inp.L_H * inp.nu2 / 2.0
    decay = math.exp(-alpha * inp.T)
    bound = decay * inp.U0 + (-math.expm1(-alpha * inp.T)) * C_E / alpha
    tail = 1.0 if inp.B == 0 else min(1.0, bound / inp.B)
    return {"alpha": alpha, "C_E": C_E, "bound_T": bound, "markov_tail": tail}


def pinsker_transfer(eps_H, C_max, eta_opt, delta):
    if eps_H < 0:
        raise ValueError("eps_H must be >= 0")
    tv = min(1.0, math.sqrt(eps_H / 2.0))
    return {"eps_TV": tv, "subopt_bound": 2.0 * C_max * tv + eta_opt, "q_budget": delta - tv}


def mc_margin(n, L, beta):
    """Uniform Hoeffding margin for L empirical violation rates from n rollouts each."""
    if n < 1 or L < 1:
        raise ValueError("need n >= 1 and L >= 1")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    return math.sqrt(math.log(L / beta) / (2.0 * n))


# ---------------------------------------------------------------------------
# linear port-Hamiltonian test system


@dataclass(frozen=True)
class LinearPH:
    """dz = (J - R) Q z dt + G a dt + Sigma^{1/2} dW with H(z) = z'Qz/2."""

    J: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    Sigma: np.ndarray
    name: str = "linear"

    @classmethod
    def make(cls, d=2, r=0.5, q=(1.0, 2.0), sigma=0.3, coupling=1.0, name="linear"):
        J = np.zeros((d, d))
        J[0, 1:] = coupling
        J[1:, 0] = -coupling
        return cls(J, r * np.eye(d), np.diag(np.resize(np.asarray(q, float), d)), np.eye(d),
                   sigma**2 * np.eye(d), name)

    @property
    def F(self):
        return (self.J - self.R) @ self.Q

    @property
    def state_dim(self):
        return self.Q.shape[0]

    def stationary_cov(self):
        return linalg.solve_continuous_lyapunov(self.F, -self.Sigma)

    def stationary_energy(self):
        return 0.5 * float(np.trace(self.Q @ self.stationary_cov()))

    def mean_energy(self, z0, T):
        """E[U(z_T)] from a fixed start with zero input."""
        P = self.stationary_cov()
        E = linalg.expm(self.F * T)
        m = E @ np.asarray(z0, float)
        C = P - E @ P @ E.T
        return 0.5 * float(m @ self.Q @ m + np.trace(self.Q @ C))

    def energy(self, z, modes=None):
        z = np.atleast_2d(z)
        return 0.5 * np.einsum("ni,ij,nj->n", z, self.Q, z)

    def grad(self, z, mode=0):
        return np.atleast_2d(z) @ self.Q.T

    def hessian_norm(self, z=None, mode=0):
        return float(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T)).max())

    def simulate(self, z0, steps, dt, rng):
        """Exact-discretization rollouts with zero input; states hold z at t = k dt."""
        z = np.array(np.atleast_2d(z0), dtype=float)
        n, d = z.shape
        E = linalg.expm(self.F * dt)
        P = self.stationary_cov()
        C = P - E @ P @ E.T
        Lc = np.linalg.cholesky(C + 1e-15 * np.eye(d))
        states = np.empty((n, steps, d))
        for k in range(steps):
            states[:, k] = z
            z = z @ E.T + rng.standard_normal((n, d)) @ Lc.T
        times = np.arange(steps) * dt
        zeros = np.zeros(steps, dtype=int)
        return [Trajectory(times.copy(), states[i], zeros.copy(), np.zeros((steps, self.G.shape[1])),
                           states[i] @ self.F.T) for i in range(n)]


# ---------------------------------------------------------------------------
# assumption checks


def _model(spec):
    """(energy, grad, hessian_norm, J, R, G, Sigma) arrays with a leading mode axis."""
    if isinstance(spec, LinearPH):
        return (spec.energy, spec.grad, spec.hessian_norm,
                spec.J[None], spec.R[None], spec.G[None], spec.Sigma[None])

    def U(z, modes):
        return energy(spec, z, modes)

    def grad(z, mode):
        return spec.library.grad_hamiltonian(np.atleast_2d(z), spec.xi[mode])

    def hess(z, mode, h=1e-5):
        z = np.atleast_2d(z)
        d = z.shape[1]
        worst = 0.0
        for row in z:
            Hm = np.empty((d, d))
            for j in range(d):
                e = np.zeros(d)
                e[j] = h
                Hm[:, j] = (grad(row + e, mode)[0] - grad(row - e, mode)[0]) / (2 * h)
            worst = max(worst, float(np.abs(np.linalg.eigvalsh(0.5 * (Hm + Hm.T))).max()))
        return worst

    return U, grad, hess, spec.J, spec.R, spec.G, spec.Sigma


def assumption_constants(spec, states, modes, safety=0.9, floor=1e-9):
    """Numerically checked (r, mu, L_H, nu2, g) on sampled states.

    Raises AssumptionUnmetError when the dissipation floor, the PL ratio or the
    Hessian bound cannot be established on the sample.
    """
    U, grad, hess, J, R, G, Sigma = _model(spec)
    states = np.atleast_2d(states)
    modes = np.broadcast_to(np.asarray(modes), (len(states),))
    r = min(float(np.linalg.eigvalsh(0.5 * (Rm + Rm.T)).min()) for Rm in R)
    if r <= floor:
        raise AssumptionUnmetError(f"dissipation is not uniformly positive (min eig R = {r:.3g})")
    mu = math.inf
    L_H = 0.0
    for m in np.unique(modes):
        sel = modes == m
        zz = states[sel]
        u = U(zz, m)
        if np.any(u < -floor):
            raise AssumptionUnmetError(f"shifted energy negative in mode {m}")
        gr = grad(zz, m)
        keep = u > floor
        if np.any(keep):
            mu = min(mu, float(np.min(np.sum(gr[keep] ** 2, axis=1) / (2.0 * u[keep]))))
        L_H = max(L_H, hess(zz[: min(len(zz), 64)], m))
    if not (math.isfinite(mu) and mu > floor):
        raise AssumptionUnmetError("PL constant not positive on the sampled region")
    nu2 = max(float(np.trace(S)) for S in Sigma)
    g = max(float(np.linalg.norm(Gm, 2)) for Gm in G)
    return {"r": r, "mu": safety * mu, "L_H": L_H, "nu2": nu2, "g": g}


def energy_drift_diagnostic(batch, spec, A=0.0, strict=True, se_factor=4.0):
    """Compare the batch-mean final energy with the Gronwall bound.

    ``batch`` is a list of Trajectory.  U_0 is the batch-mean initial energy and
    T the time of the last stored sample.  With ``strict`` a violation beyond
    ``se_factor`` standard errors raises BoundViolationError.
    """
    from .errors import BoundViolationError

    if not batch:
        raise ValueError("empty trajectory batch")
    U = _model(spec)[0]
    states = np.concatenate([tr.states for tr in batch])
    modes = np.concatenate([tr.modes for tr in batch])
    consts = assumption_constants(spec, states, modes)
    z0 = np.stack([tr.states[0] for tr in batch])
    zT = np.stack([tr.states[-1] for tr in batch])
    s0 = np.array([tr.modes[0] for tr in batch])
    sT = np.array([tr.modes[-1] for tr in batch])
    u0 = U(z0, s0)
    uT = U(zT, sT)
    T = float(batch[0].times[-1])
    inp = CertificateInputs(r=consts["r"], mu=consts["mu"], g=consts["g"], A=A, L_H=consts["L_H"],
                            nu2=consts["nu2"], T=T, U0=float(u0.mean()))
    eb = energy_bound(inp)
    mean = float(uT.mean())
    se = float(uT.std(ddof=1) / math.sqrt(len(uT))) if len(uT) > 1 else 0.0
    ok = mean <= eb["bound_T"] + se_factor * se
    if strict and not ok:
        raise BoundViolationError("mean final energy exceeds the Gronwall bound", "U_T", mean, eb["bound_T"])
    return {**consts, **eb, "T": T, "U0": inp.U0, "empirical_U": mean, "se": se, "pass": ok}


CERT_HEADER = ["system", "alpha", "C_E", "T", "bound", "empirical_U", "pass"]
