"""Known-equation hybrid port-Hamiltonian systems, simulation and corruption.

Each system is a small set of modes.  Mode ``m`` evolves by

    dz = [(J_m - R_m) grad H_m(z) + G_m a] dt + Sigma_m^{1/2} dW,
    H_m(z) = Theta(z) . xi_m,

and switches when a guard function crosses zero.  Modes are 0-based in
arrays; the CSV and manifest writers shift them to 1-based labels.
"""

from dataclasses import dataclass, field, replace
import json

import numpy as np

from .errors import NonFiniteStateError
from .library import LibrarySpec

MANIFEST_VERSION = "1.0"
SYSTEM_NAMES = ("puck", "block", "pendulum", "pusher")


def _identity(z):
    return z


@dataclass(frozen=True)
class Guard:
    """Switch from ``source`` to ``target`` when ``fn(z, a)`` becomes >= 0.

    State guards fire on a sign change across an integration step; the
    crossing time is refined by one false-position step, exact for guards
    linear in the state.  Action
    guards (``uses_action``) are tested at the start of each step.
    """

    name: str
    source: int
    target: int
    fn: object
    reset: object = _identity
    uses_action: bool = False


@dataclass(frozen=True)
class HybridSystemSpec:
    name: str
    library: LibrarySpec
    J: np.ndarray  # (M, d, d)
    R: np.ndarray  # (M, d, d)
    G: np.ndarray  # (M, d, q)
    Sigma: np.ndarray  # (M, d, d)
    xi: np.ndarray  # (M, p) true coefficients
    guards: tuple
    energy_offsets: np.ndarray  # (M,) constants dropped from the library
    mode_names: tuple
    velocity_coords: tuple = ()
    constants: dict = field(default_factory=dict)
    dt: float = 1e-3
    sample_initial: object = None
    sample_actions: object = None

    @property
    def mode_count(self):
        return self.J.shape[0]

    @property
    def state_dim(self):
        return self.J.shape[1]

    @property
    def input_dim(self):
        return self.G.shape[2]

    @property
    def p(self):
        return self.library.size

    def support(self, mode):
        return tuple(int(j) for j in np.flatnonzero(self.xi[mode]))

    @property
    def sparsity(self):
        return int(max(np.count_nonzero(x) for x in self.xi))

    def check(self, tol=1e-10):
        """Raise ValueError if any structural invariant fails."""
        for m in range(self.mode_count):
            if not np.array_equal(self.J[m], -self.J[m].T):
                raise ValueError(f"J_{m} is not skew-symmetric")
            for label, mat in (("R", self.R[m]), ("Sigma", self.Sigma[m])):
                if not np.allclose(mat, mat.T, atol=0.0):
                    raise ValueError(f"{label}_{m} is not symmetric")
                if np.linalg.eigvalsh(mat).min() < -tol:
                    raise ValueError(f"{label}_{m} is not positive semidefinite")
        if self.sparsity > 3 or self.p > 12:
            raise ValueError("library or support exceeds the k<=3, p<=12 budget")
        return True

    def with_noise(self, sigma):
        """Copy with isotropic diffusion ``sigma**2 * I`` on every mode."""
        d = self.state_dim
        S = np.broadcast_to(sigma**2 * np.eye(d), self.Sigma.shape).copy()
        return replace(self, Sigma=S)


def vector_field(spec, z, mode, a):
    """Drift of mode ``mode`` at states ``z`` (n, d) under actions ``a`` (n, q)."""
    z = np.atleast_2d(z)
    a = np.atleast_2d(a)
    grad = spec.library.grad_hamiltonian(z, spec.xi[mode])
    return grad @ (spec.J[mode] - spec.R[mode]).T + a @ spec.G[mode].T


def energy(spec, z, modes):
    """Shifted energy U_s(z) = H_s(z) + offset_s for each row."""
    z = np.atleast_2d(z)
    modes = np.broadcast_to(np.asarray(modes), (z.shape[0],))
    theta = spec.library.values(z)
    return np.einsum("np,np->n", theta, spec.xi[modes]) + spec.energy_offsets[modes]


def _psd_sqrt(mat):
    w, v = np.linalg.eigh(mat)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


# ---------------------------------------------------------------------------
# the four known-equation systems


def _planar(coeffs, names):
    xi = np.zeros(len(names))
    for term, value in coeffs.items():
        xi[names.index(term)] = value
    return xi


_J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])
_POLY2 = ("q", "p", "q^2", "p^2", "q*p", "q^3", "p^3", "q^2*p", "q*p^2")


def _stack(*mats):
    return np.stack([np.asarray(m, dtype=float) for m in mats])


def _puck():
    g, q_w, k_c, c, e = 9.81, 0.3, 80.0, 2.0, 0.8
    lib = LibrarySpec(_POLY2, ("q", "p"))
    xi = np.stack([
        _planar({"p^2": 0.5, "q": g}, lib.names),
        _planar({"p^2": 0.5, "q^2": 0.5 * k_c, "q": g - k_c * q_w}, lib.names),
    ])

    def impact(z):
        z = z.copy()
        z[:, 1] = -e * z[:, 1]
        z[:, 0] = np.maximum(z[:, 0], 0.0)
        return z

    guards = (
        Guard("enter_cushion", 0, 1, lambda z, a: q_w - z[:, 0]),
        Guard("leave_cushion", 1, 0, lambda z, a: z[:, 0] - q_w),
        Guard("floor_impact", 1, 1, lambda z, a: -z[:, 0], impact),
    )

    def initial(rng, n):
        z = np.column_stack([rng.uniform(0.6, 1.2, n), rng.uniform(-1.0, 1.0, n)])
        return z, np.zeros(n, dtype=int)

    def actions(rng, n, steps, dt):
        return _smooth_actions(rng, n, steps, dt, 1, scale=2.0)

    return HybridSystemSpec(
        name="puck", library=lib,
        J=_stack(_J2, _J2),
        R=_stack(np.zeros((2, 2)), np.diag([0.0, c])),
        G=_stack([[0.0], [1.0]], [[0.0], [1.0]]),
        Sigma=np.zeros((2, 2, 2)),
        xi=xi, guards=guards,
        energy_offsets=np.array([0.0, 0.5 * k_c * q_w**2]),
        mode_names=("free_flight", "wall_proximity"),
        velocity_coords=(1,),
        constants={"mass": 1.0, "gravity": g, "cushion_stiffness": k_c, "restitution": e,
                   "wall_zone": q_w, "cushion_damping": c},
        sample_initial=initial, sample_actions=actions,
    )


def _block():
    f, m_eff, p_c, a_break = 0.4 * 9.81, 2.0, 0.3, 5.0
    lib = LibrarySpec(_POLY2, ("q", "p"))
    xi = np.stack([
        _planar({"p^2": 0.5}, lib.names),
        _planar({"p^2": 0.5, "q": f}, lib.names),
        _planar({"p^2": 0.5 / m_eff}, lib.names),
    ])

    def release(z):
        z = z.copy()
        z[:, 1] = z[:, 1] / m_eff
        return z

    guards = (
        Guard("enter_rough", 0, 1, lambda z, a: z[:, 0]),
        Guard("leave_rough", 1, 0, lambda z, a: -z[:, 0]),
        Guard("capture", 1, 2, lambda z, a: p_c - z[:, 1]),
        Guard("stall", 1, 2, lambda z, a: -z[:, 1]),
        Guard("break_away", 2, 1, lambda z, a: a[:, 0] - a_break, release, uses_action=True),
        Guard("release_left", 2, 0, lambda z, a: -z[:, 0], release),
    )

    def initial(rng, n):
        z = np.column_stack([rng.uniform(-1.0, -0.2, n), rng.uniform(0.8, 2.0, n)])
        return z, np.zeros(n, dtype=int)

    def actions(rng, n, steps, dt):
        return _pulse_actions(rng, n, steps, dt, amplitude=(5.5, 8.0), period=(0.35, 0.6))

    return HybridSystemSpec(
        name="block", library=lib,
        J=_stack(_J2, _J2, _J2),
        R=_stack(np.diag([0.0, 0.2]), np.diag([0.0, 0.5]), np.diag([0.0, 4.0])),
        G=_stack([[0.0], [1.0]], [[0.0], [1.0]], [[0.0], [1.0]]),
        Sigma=np.zeros((3, 2, 2)),
        xi=xi, guards=guards,
        energy_offsets=np.zeros(3),
        mode_names=("free", "slip", "stick"),
        velocity_coords=(1,),
        constants={"mass": 1.0, "friction_force": f, "friction_coefficient": 0.4, "gravity": 9.81,
                   "stick_mass": m_eff, "capture_momentum": p_c, "break_force": a_break},
        sample_initial=initial, sample_actions=actions,
    )


_PEND_LIB = ("q", "p", "q^2", "p^2", "q*p", "q^3", "p^3", "q*p^2", "cos(q)")


def _pendulum():
    w2, k_s = 9.81, 8.0
    lib = LibrarySpec(_PEND_LIB, ("q", "p"))
    xi = np.stack([
        _planar({"p^2": 0.5, "cos(q)": -w2}, lib.names),
        _planar({"p^2": 0.5, "cos(q)": -w2, "q^2": 0.5 * k_s}, lib.names),
    ])
    guards = (
        Guard("hit_stop", 0, 1, lambda z, a: -z[:, 0]),
        Guard("leave_stop", 1, 0, lambda z, a: z[:, 0]),
    )

    def initial(rng, n):
        z = np.column_stack([rng.uniform(0.9, 1.5, n), rng.uniform(-0.5, 0.5, n)])
        return z, np.zeros(n, dtype=int)

    def actions(rng, n, steps, dt):
        return _smooth_actions(rng, n, steps, dt, 1, scale=1.5)

    return HybridSystemSpec(
        name="pendulum", library=lib,
        J=_stack(_J2, _J2),
        R=_stack(np.diag([0.0, 0.05]), np.diag([0.0, 0.5])),
        G=_stack([[0.0], [1.0]], [[0.0], [1.0]]),
        Sigma=np.zeros((2, 2, 2)),
        xi=xi, guards=guards,
        energy_offsets=np.array([w2, w2]),
        mode_names=("swing", "stop_contact"),
        velocity_coords=(1,),
        constants={"gravity_over_length": w2, "stop_stiffness": k_s, "inertia": 1.0},
        sample_initial=initial, sample_actions=actions,
    )


_PUSH_LIB = ("x", "y", "px", "py", "x^2", "y^2", "px^2", "py^2", "x*y", "px*py", "x*px", "y*py")


def _pusher():
    f, a_c = 2.0, 0.5
    lib = LibrarySpec(_PUSH_LIB, ("x", "y", "px", "py"))
    # object on an incline: the slope potential f*x acts in both modes
    xi = np.stack([
        _planar({"px^2": 0.5, "py^2": 0.5, "x": f}, lib.names),
        _planar({"px^2": 0.5, "py^2": 0.5, "x": f}, lib.names),
    ])
    J4 = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    G_contact = np.vstack([np.zeros((2, 2)), np.eye(2)])
    guards = (
        Guard("make_contact", 0, 1, lambda z, a: a[:, 0] - a_c, uses_action=True),
        Guard("break_contact", 1, 0, lambda z, a: a_c - a[:, 0] + 1e-12, uses_action=True),
    )

    def initial(rng, n):
        z = np.column_stack([
            rng.uniform(0.0, 0.5, n), rng.uniform(-0.5, 0.5, n),
            rng.uniform(0.0, 0.5, n), rng.uniform(-0.3, 0.3, n),
        ])
        return z, np.zeros(n, dtype=int)

    def actions(rng, n, steps, dt):
        ax = _pulse_actions(rng, n, steps, dt, amplitude=(3.0, 5.0), period=(0.3, 0.5))[..., 0]
        ay = _smooth_actions(rng, n, steps, dt, 1, scale=2.0)[..., 0]
        return np.stack([ax, ay], axis=-1)

    return HybridSystemSpec(
        name="pusher", library=lib,
        J=_stack(J4, J4),
        R=_stack(np.diag([0.0, 0.0, 0.3, 0.3]), np.diag([0.0, 0.0, 0.6, 0.6])),
        G=_stack(np.zeros((4, 2)), G_contact),
        Sigma=np.zeros((2, 4, 4)),
        xi=xi, guards=guards,
        energy_offsets=np.zeros(2),
        mode_names=("free_slide", "push_contact"),
        velocity_coords=(2, 3),
        constants={"mass": 1.0, "slope_force": f, "contact_threshold": a_c},
        sample_initial=initial, sample_actions=actions,
    )


def _smooth_actions(rng, n, steps, dt, q, scale):
    """Random sums of low-frequency sinusoids, shape (n, steps, q)."""
    t = np.arange(steps) * dt
    out = np.zeros((n, steps, q))
    for _ in range(3):
        amp = rng.normal(0.0, scale / 3.0, (n, 1, q))
        freq = rng.uniform(0.3, 2.0, (n, 1, q))
        phase = rng.uniform(0.0, 2 * np.pi, (n, 1, q))
        out += amp * np.sin(2 * np.pi * freq * t[None, :, None] + phase)
    return out


def _pulse_actions(rng, n, steps, dt, amplitude, period):
    """Alternating on/off pushes with random amplitudes, shape (n, steps, 1)."""
    out = np.zeros((n, steps, 1))
    for i in range(n):
        k = 0
        on = rng.random() < 0.5
        while k < steps:
            length = max(1, int(rng.uniform(*period) / dt))
            if on:
                out[i, k:k + length, 0] = rng.uniform(*amplitude)
            k += length
            on = not on
    return out


_BUILDERS = {"puck": _puck, "block": _block, "pendulum": _pendulum, "pusher": _pusher}


def make_system(name):
    """Return the known-equation system called ``name``."""
    try:
        spec = _BUILDERS[name]()
    except KeyError:
        raise ValueError(f"unknown system {name!r}; expected one of {SYSTEM_NAMES}") from None
    spec.check()
    return spec


def _inv2(c):
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.float64(1.0) / (2.0 * c))


def _coef(spec, xi, mode, term):
    return float(np.atleast_2d(xi)[mode, spec.library.index(term)])


def physical_constants(spec, xi):
    """Physical constants implied by coefficients ``xi`` (M, p).

    Non-identifiable values come back as inf/nan, which the recovery
    metrics score as a full error.
    """
    c = lambda m, t: _coef(spec, xi, m, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.name == "puck":
            mass = _inv2(c(0, "p^2"))
            return {"mass": mass, "gravity": c(0, "q") / mass, "cushion_stiffness": 2.0 * c(1, "q^2")}
        if spec.name == "block":
            mass = _inv2(c(0, "p^2"))
            return {"mass": mass, "friction_coefficient": c(1, "q") / (mass * 9.81),
                    "stick_mass": _inv2(c(2, "p^2"))}
        if spec.name == "pendulum":
            return {"gravity_over_length": -c(0, "cos(q)"), "stop_stiffness": 2.0 * c(1, "q^2")}
        if spec.name == "pusher":
            return {"mass": _inv2(0.5 * (c(0, "px^2") + c(0, "py^2"))), "slope_force": c(1, "x")}
    raise ValueError(f"no constant map for system {spec.name!r}")


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class Switch:
    step: int
    source: int
    target: int
    guard: str
    energy_before: float
    energy_after: float


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    modes: np.ndarray
    actions: np.ndarray
    derivatives: np.ndarray
    switches: tuple = ()

    def __len__(self):
        return len(self.times)


def simulate(spec, z0, s0, actions, steps, seed):
    """Simulate one trajectory of ``steps`` Euler–Maruyama steps."""
    rng = np.random.default_rng(seed)
    actions = np.asarray(actions, dtype=float).reshape(steps, -1)
    batch = simulate_batch(spec, np.atleast_2d(z0), np.atleast_1d(s0), actions[None], steps, rng)
    return batch[0]


def simulate_batch(spec, z0, s0, actions, steps, rng):
    """Simulate ``len(z0)`` independent trajectories in lock step.

    ``actions`` has shape (n, steps, q).  Returns a list of Trajectory.
    Each stored sample k holds the state before step k, the action applied
    during it and the noise-free drift at that state.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    dt = spec.dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = np.array(z0, dtype=float, copy=True)
    s = np.array(s0, dtype=int, copy=True)
    n, d = z.shape
    actions = np.asarray(actions, dtype=float)
    if actions.shape[:2] != (n, steps):
        raise ValueError("actions must have shape (n, steps, q)")
    sq = np.stack([_psd_sqrt(S) for S in spec.Sigma])
    noisy = np.any(spec.Sigma != 0)

    states = np.empty((n, steps, d))
    modes = np.empty((n, steps), dtype=int)
    derivs = np.empty((n, steps, d))
    switches = [[] for _ in range(n)]

    def drift(zz, ss, aa):
        out = np.empty_like(zz)
        for m in np.unique(ss):
            idx = ss == m
            out[idx] = vector_field(spec, zz[idx], m, aa[idx])
        return out

    def apply_switch(idx, guard, zz, k):
        if not np.any(idx):
            return zz
        before = energy(spec, zz[idx], guard.source)
        zz = zz.copy()
        zz[idx] = guard.reset(zz[idx])
        after = energy(spec, zz[idx], guard.target)
        for j, i in enumerate(np.flatnonzero(idx)):
            switches[i].append(Switch(k, guard.source, guard.target, guard.name,
                                      float(before[j]), float(after[j])))
        s[idx] = guard.target
        return zz

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            a = actions[:, k]
            # action guards act before integration
            for guard in spec.guards:
                if guard.uses_action:
                    active = s == guard.source
                    if np.any(active):
                        fire = np.zeros(n, dtype=bool)
                        fire[active] = guard.fn(z[active], a[active]) >= 0
                        z = apply_switch(fire, guard, z, k)
            f = drift(z, s, a)
            states[:, k] = z
            modes[:, k] = s
            derivs[:, k] = f
            dz = f * dt
            if noisy:
                xi = rng.standard_normal((n, d))
                dz = dz + np.sqrt(dt) * np.einsum("nij,nj->ni", sq[s], xi)
            z_new = z + dz
            # state guards: sign change across the step, one false-position refinement
            theta = np.full(n, np.inf)
            chosen = np.full(n, -1)
            for gi, guard in enumerate(spec.guards):
                if guard.uses_action:
                    continue
                active = s == guard.source
                if not np.any(active):
                    continue
                g_old = guard.fn(z[active], a[active])
                g_new = guard.fn(z_new[active], a[active])
                cross = (g_old < 0) & (g_new >= 0)
                if not np.any(cross):
                    continue
                go, gn = g_old[cross], g_new[cross]
                th = np.clip(go / (go - gn), 0.0, 1.0)
                idx = np.flatnonzero(active)[cross]
                better = th < theta[idx]
                theta[idx[better]] = th[better]
                chosen[idx[better]] = gi
            for gi in np.unique(chosen[chosen >= 0]):
                guard = spec.guards[gi]
                idx = chosen == gi
                th = theta[idx][:, None]
                zc = z.copy()
                zc[idx] = z[idx] + th * dz[idx]
                zc = apply_switch(idx, guard, zc, k)
                rest = (1.0 - th) * dt
                zc[idx] = zc[idx] + rest * drift(zc[idx], s[idx], a[idx])
                z_new[idx] = zc[idx]
            z = z_new
            if not np.all(np.isfinite(z)):
                raise NonFiniteStateError(f"state left the representable range at step {k}; reduce dt")

    times = np.arange(steps) * dt
    return [
        Trajectory(times.copy(), states[i], modes[i], actions[i], derivs[i], tuple(switches[i]))
        for i in range(n)
    ]


def simulate_random(spec, n, steps, rng):
    """Simulate ``n`` trajectories from the system's default initial and action samplers."""
    z0, s0 = spec.sample_initial(rng, n)
    acts = spec.sample_actions(rng, n, steps, spec.dt)
    return simulate_batch(spec, z0, s0, acts, steps, rng)


# ---------------------------------------------------------------------------
# corruption


@dataclass(frozen=True)
class CorruptionConfig:
    sigma_obs: float = 0.0
    missing_rate: float = 0.0
    selector: tuple = None  # observed coordinates; None means all
    hidden_velocity_rate: float = 0.0
    sigma_der: float = 0.0
    eps_mode: float = 0.0
    derivative_window: int = 5
    derivative_stride: int = 5


@dataclass(frozen=True)
class ObservationSequence:
    times: np.ndarray
    values: np.ndarray  # (T, r), NaN where missing
    missing: np.ndarray  # (T, r) bool
    occluded: np.ndarray  # (T,) bool
    selector: tuple
    derivatives: np.ndarray  # (T, r), NaN where missing
    mode_labels: np.ndarray  # evaluation only, possibly flipped
    sigma_obs: float = 0.0
    sigma_der: float = 0.0
    eps_mode: float = 0.0

    def __len__(self):
        return len(self.times)

    @property
    def observed(self):
        """Steps with at least one visible coordinate."""
        return ~np.all(self.missing, axis=1)


def fill_gaps(values):
    """Linearly interpolate NaN entries column-wise (edge values held)."""
    out = np.array(values, dtype=float, copy=True)
    t = np.arange(out.shape[0])
    for j in range(out.shape[1]):
        col = out[:, j]
        ok = np.isfinite(col)
        if ok.sum() == 0:
            col[:] = 0.0
        elif not ok.all():
            col[~ok] = np.interp(t[~ok], t[ok], col[ok])
    return out


def moving_average(x, window):
    """Centered moving average with edge-shrunk windows; ``window`` odd."""
    x = np.asarray(x, dtype=float)
    if window <= 1:
        return x.copy()
    h = window // 2
    squeeze = x.ndim == 1
    x2 = x[:, None] if squeeze else x
    c = np.cumsum(np.vstack([np.zeros((1, x2.shape[1])), x2]), axis=0)
    n = x2.shape[0]
    lo = np.clip(np.arange(n) - h, 0, n)
    hi = np.clip(np.arange(n) + h + 1, 0, n)
    out = (c[hi] - c[lo]) / (hi - lo)[:, None]
    return out[:, 0] if squeeze else out


def numerical_derivative(values, dt, stride=1, window=1):
    """Smoothed central differences over ``stride`` steps (one-sided at the edges)."""
    x = moving_average(values, window) if window > 1 else np.asarray(values, dtype=float)
    n = x.shape[0]
    k = np.arange(n)
    lo = np.clip(k - stride, 0, n - 1)
    hi = np.clip(k + stride, 0, n - 1)
    return (x[hi] - x[lo]) / ((hi - lo)[:, None] * dt if x.ndim == 2 else (hi - lo) * dt)


def corrupt(traj, cfg, seed, spec=None):
    """Apply observation noise, missingness, hidden velocities and label flips."""
    if cfg.sigma_obs < 0 or cfg.sigma_der < 0:
        raise ValueError("noise standard deviations must be >= 0")
    if not 0.0 <= cfg.missing_rate < 1.0:
        raise ValueError("missing rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    T, d = traj.states.shape
    selector = tuple(range(d)) if cfg.selector is None else tuple(cfg.selector)
    clean = traj.states[:, selector]
    values = clean + cfg.sigma_obs * rng.standard_normal(clean.shape)
    missing = np.broadcast_to(rng.random((T, 1)) < cfg.missing_rate, values.shape).copy()
    if cfg.hidden_velocity_rate > 0 and spec is not None:
        vel_cols = [selector.index(c) for c in spec.velocity_coords if c in selector]
        hide = rng.random(T) < cfg.hidden_velocity_rate
        for c in vel_cols:
            missing[hide, c] = True
    values[missing] = np.nan
    dt = float(traj.times[1] - traj.times[0]) if T > 1 else 1.0
    deriv = numerical_derivative(fill_gaps(values), dt, cfg.derivative_stride, cfg.derivative_window)
    deriv = deriv + cfg.sigma_der * rng.standard_normal(deriv.shape)
    deriv[missing] = np.nan
    labels = traj.modes.copy()
    M = int(spec.mode_count) if spec is not None else int(labels.max()) + 1
    if cfg.eps_mode > 0 and M > 1:
        flip = rng.random(T) < cfg.eps_mode
        shift = rng.integers(1, M, T)
        labels[flip] = (labels[flip] + shift[flip]) % M
    return ObservationSequence(
        times=traj.times.copy(), values=values, missing=missing,
        occluded=np.zeros(T, dtype=bool), selector=selector, derivatives=deriv,
        mode_labels=labels, sigma_obs=cfg.sigma_obs, sigma_der=cfg.sigma_der,
        eps_mode=cfg.eps_mode,
    )


def occlude(obs, rate, seed):
    """Blank an i.i.d. Bernoulli(``rate``) subset of whole time steps."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("occlusion rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    hit = rng.random(len(obs)) < rate
    occluded = obs.occluded | hit
    missing = obs.missing | occluded[:, None]
    values = obs.values.copy()
    values[missing] = np.nan
    deriv = obs.derivatives.copy()
    deriv[missing] = np.nan
    return replace(obs, values=values, missing=missing, occluded=occluded, derivatives=deriv)


# ---------------------------------------------------------------------------
# manifest


def manifest(spec):
    """Versioned, JSON-formatted description of a system's ground truth."""
    return {
        "manifest_version": MANIFEST_VERSION,
        "system": spec.name,
        "M": spec.mode_count,
        "d": spec.state_dim,
        "q": spec.input_dim,
        "p": spec.p,
        "k": spec.sparsity,
        "dt": spec.dt,
        "coordinates": list(spec.library.coords),
        "library": list(spec.library.names),
        "modes": [
            {
                "label": m + 1,
                "name": spec.mode_names[m],
                "support": [spec.library.names[j] for j in spec.support(m)],
                "xi": {spec.library.names[j]: float(spec.xi[m, j]) for j in spec.support(m)},
                "R_diag": np.diag(spec.R[m]).tolist(),
                "energy_offset": float(spec.energy_offsets[m]),
            }
            for m in range(spec.mode_count)
        ],
        "guards": [
            {"name": g.name, "from": g.source + 1, "to": g.target + 1, "uses_action": g.uses_action}
            for g in spec.guards
        ],
        "constants": dict(spec.constants),
        "vf_nrmse_normalizer": "peak-to-peak range of the true stacked vector field",
        "physical_constants": physical_constants(spec, spec.xi),
    }


def manifest_text(spec):
    return json.dumps(manifest(spec), indent=2, sort_keys=False) + "\n"
