import json
from dataclasses import replace

import numpy as np
import pytest

from supportsafe.errors import NonFiniteStateError
from supportsafe.library import LibrarySpec
from supportsafe.systems import (SYSTEM_NAMES, CorruptionConfig, HybridSystemSpec, corrupt, energy, make_system,
                                 manifest, manifest_text, occlude, physical_constants, simulate, simulate_batch,
                                 simulate_random)

# bound on the Hessian norm of H over each system's reachable states
HESS = {"puck": 80.0, "block": 1.0, "pendulum": 9.81 + 8.0, "pusher": 1.0}


def _oscillator(dt=1e-3):
    lib = LibrarySpec(("q^2", "p^2"), ("q", "p"))
    return HybridSystemSpec(
        name="osc", library=lib, J=np.array([[[0.0, 1.0], [-1.0, 0.0]]]), R=np.zeros((1, 2, 2)),
        G=np.zeros((1, 2, 1)), Sigma=np.zeros((1, 2, 2)), xi=np.array([[0.5, 0.5]]), guards=(),
        energy_offsets=np.zeros(1), mode_names=("only",), dt=dt)


def _unforced(spec, n, steps, seed):
    rng = np.random.default_rng(seed)
    z0, s0 = spec.sample_initial(rng, n)
    return simulate_batch(spec, z0, s0, np.zeros((n, steps, spec.input_dim)), steps, rng)


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_structure_invariants(name):
    spec = make_system(name)
    assert spec.check()
    for m in range(spec.mode_count):
        assert np.array_equal(spec.J[m], -spec.J[m].T)
        assert np.linalg.eigvalsh(spec.R[m]).min() >= 0
        assert np.linalg.eigvalsh(spec.Sigma[m]).min() >= 0
    assert spec.state_dim <= 4 and spec.p <= 12 and spec.sparsity <= 3


def test_named_instances():
    puck = make_system("puck")
    assert puck.mode_count == 2 and puck.state_dim == 2
    assert puck.xi[0, puck.library.index("p^2")] == 0.5
    assert puck.xi[0, puck.library.index("q")] == pytest.approx(9.81)
    assert make_system("block").mode_count == 3
    pend = make_system("pendulum")
    assert "cos(q)" in pend.library.names and pend.mode_count == 2
    with pytest.raises(ValueError):
        make_system("rocket")


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_manifest_round_trips_ground_truth(name):
    spec = make_system(name)
    doc = json.loads(manifest_text(spec))
    assert doc == json.loads(json.dumps(manifest(spec)))
    for m, mode in enumerate(doc["modes"]):
        for term, val in mode["xi"].items():
            assert spec.xi[m, spec.library.index(term)] == val
    assert doc["physical_constants"] == physical_constants(spec, spec.xi)


def test_conservative_limit_energy_drift():
    spec = _oscillator()
    tr = simulate(spec, [1.0, 0.0], 0, np.zeros(5000), 5000, seed=0)
    H = energy(spec, tr.states, tr.modes)
    # explicit Euler drifts by O(dt^2) per step on a harmonic oscillator
    assert np.abs(np.diff(H)).max() <= spec.dt**2 * H.max() * 1.01
    assert abs(H[-1] - H[0]) <= 10 * spec.dt


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_unforced_energy_nonincreasing_within_mode(name):
    spec = make_system(name)
    for tr in _unforced(spec, 40, 2000, 3):
        U = energy(spec, tr.states, tr.modes)
        f2 = np.sum(tr.derivatives**2, axis=1)
        same = tr.modes[1:] == tr.modes[:-1]
        # the only admissible increase is the Euler remainder 1/2 f'H''f dt^2
        slack = 0.5 * HESS[name] * f2[:-1] * spec.dt**2 * (1 + 1e-6) + 1e-12
        assert np.all(np.diff(U)[same] <= slack[same])


@pytest.mark.parametrize("name", ["puck", "block", "pendulum"])
def test_unforced_switches_are_nonexpansive(name):
    spec = make_system(name)
    sw = [s for tr in _unforced(spec, 600, 2000, 11) for s in tr.switches]
    assert len(sw) >= 1000
    assert max(s.energy_after - s.energy_before for s in sw) <= 1e-9


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_state_triggered_switches_are_nonexpansive_under_inputs(name):
    spec = make_system(name)
    by_action = {g.name for g in spec.guards if g.uses_action}
    sw = [s for tr in simulate_random(spec, 150, 3000, np.random.default_rng(5)) for s in tr.switches]
    state_sw = [s for s in sw if s.guard not in by_action]
    if name == "pusher":
        # contact is actuated, and the incline potential is shared by both modes
        assert not state_sw and len(sw) >= 1000
        assert max(s.energy_after - s.energy_before for s in sw) <= 1e-9
    else:
        assert max(s.energy_after - s.energy_before for s in state_sw) <= 1e-9


def test_block_stick_mode_is_a_fixed_point():
    spec = make_system("block")
    tr = simulate(spec, [0.4, 0.0], 2, np.zeros(1000), 1000, seed=0)
    assert np.all(tr.modes == 2)
    assert np.all(tr.states == tr.states[0])
    np.testing.assert_array_equal(tr.derivatives, 0.0)


def test_puck_restitution():
    spec = make_system("puck")
    e = spec.constants["restitution"]
    impact = next(g for g in spec.guards if g.name == "floor_impact")
    z = np.array([[-1e-4, -3.0], [0.0, -0.5]])
    out = impact.reset(z)
    np.testing.assert_allclose(out[:, 1], -e * z[:, 1])
    # simulated impacts: post-step momentum is -e p^- up to one step of drift
    trajs = simulate_random(spec, 30, 3000, np.random.default_rng(2))
    hits = 0
    for tr in trajs:
        for s in tr.switches:
            if s.guard != "floor_impact":
                continue
            k = s.step
            p_before, p_after = tr.states[k, 1], tr.states[k + 1, 1]
            drift = 2 * spec.dt * np.abs(tr.derivatives[k:k + 2, 1]).max()
            assert abs(abs(p_after) - e * abs(p_before)) <= drift
            hits += 1
    assert hits > 10


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_simulation_is_bitwise_deterministic(name):
    spec = make_system(name).with_noise(0.05)
    a = simulate_random(spec, 3, 500, np.random.default_rng(9))
    b = simulate_random(spec, 3, 500, np.random.default_rng(9))
    for x, y in zip(a, b):
        assert x.states.tobytes() == y.states.tobytes()
        assert np.array_equal(x.modes, y.modes) and x.switches == y.switches


def test_bad_step_raises_nonfinite():
    spec = _oscillator(dt=5.0)
    with pytest.raises(NonFiniteStateError) as info:
        simulate(spec, [1.0, 0.0], 0, np.zeros(2000), 2000, seed=0)
    assert info.value.code == "NON_FINITE_STATE"


def test_simulate_preconditions():
    spec = _oscillator()
    with pytest.raises(ValueError):
        simulate(spec, [1.0, 0.0], 0, np.zeros(0), 0, seed=0)
    with pytest.raises(ValueError):
        simulate(replace(spec, dt=0.0), [1.0, 0.0], 0, np.zeros(3), 3, seed=0)


@pytest.fixture(scope="module")
def long_traj():
    spec = make_system("block")
    return spec, simulate_random(spec, 1, 10_000, np.random.default_rng(4))[0]


def test_identity_corruption(long_traj):
    spec, tr = long_traj
    obs = corrupt(tr, CorruptionConfig(), 0, spec)
    assert np.array_equal(obs.values, tr.states)
    assert not obs.missing.any()
    assert np.array_equal(obs.mode_labels, tr.modes)


def test_missing_rate_binomial(long_traj):
    spec, tr = long_traj
    T = len(tr)
    for r in (0.05, 0.5, 0.95):
        obs = corrupt(tr, CorruptionConfig(missing_rate=r), 1, spec)
        frac = obs.missing[:, 0].mean()
        assert abs(frac - r) <= 3 * np.sqrt(r * (1 - r) / T)
    with pytest.raises(ValueError):
        corrupt(tr, CorruptionConfig(missing_rate=1.0), 1, spec)


def test_label_flip_rate(long_traj):
    spec, tr = long_traj
    obs = corrupt(tr, CorruptionConfig(eps_mode=0.05), 2, spec)
    frac = np.mean(obs.mode_labels != tr.modes)
    assert abs(frac - 0.05) <= 3 * np.sqrt(0.05 * 0.95 / len(tr))


def test_hidden_velocity_only_masks_velocity(long_traj):
    spec, tr = long_traj
    obs = corrupt(tr, CorruptionConfig(hidden_velocity_rate=0.3), 3, spec)
    assert not obs.missing[:, 0].any()
    assert 0.25 < obs.missing[:, 1].mean() < 0.35


def test_corruption_is_pure(long_traj):
    spec, tr = long_traj
    before = tr.states.copy(), tr.modes.copy()
    obs = corrupt(tr, CorruptionConfig(sigma_obs=0.1, missing_rate=0.3, sigma_der=0.2, eps_mode=0.1), 5, spec)
    obs2 = occlude(obs, 0.5, 6)
    assert np.array_equal(tr.states, before[0]) and np.array_equal(tr.modes, before[1])
    again = corrupt(tr, CorruptionConfig(sigma_obs=0.1, missing_rate=0.3, sigma_der=0.2, eps_mode=0.1), 5, spec)
    np.testing.assert_array_equal(obs.values, again.values)
    assert not obs.occluded.any() and obs2.occluded.any()


def test_occlusion_rates(long_traj):
    spec, tr = long_traj
    obs = corrupt(tr, CorruptionConfig(), 0, spec)
    same = occlude(obs, 0.0, 1)
    np.testing.assert_array_equal(same.values, obs.values)
    assert abs(occlude(obs, 0.9, 2).occluded.mean() - 0.9) <= 0.01
    twice = occlude(occlude(obs, 0.25, 3), 0.25, 4)
    expected = 1 - 0.75**2
    assert abs(twice.occluded.mean() - expected) <= 3 * np.sqrt(expected * (1 - expected) / len(tr))
