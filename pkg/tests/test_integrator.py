import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multivirus import (
    ControlConfig,
    ControlPolicy,
    InfectionState,
    IntegratorConfig,
    SystemSpec,
    simulate,
    step,
)
from multivirus.errors import IntegrationBlowupError, PreconditionError, StepSizeWarning
from multivirus.integrator import beta_samples
from multivirus.mobility import BetaPerturbation, MobilityConfig, MobilityModel
from oracles import random_irreducible, reference_solution


def logistic(t, p0, beta, delta):
    r = beta - delta
    return r * p0 / (beta * p0 + (r - beta * p0) * np.exp(-r * t))


def random_spec(seed, m=2, n=5):
    rng = np.random.default_rng(seed)
    betas = np.array([random_irreducible(rng, n) for _ in range(m)])
    deltas = rng.uniform(0.2, 1.0, (m, n))
    return SystemSpec.from_arrays(betas, deltas), rng


def test_logistic_closed_form():
    spec = SystemSpec.from_arrays([[[1.0]]], [[0.5]])
    traj = simulate(spec, InfectionState([[0.1]]), IntegratorConfig(dt=1e-3, t_end=10.0, record_every=100))
    exact = logistic(traj.times, 0.1, 1.0, 0.5)
    assert np.abs(traj.states[:, 0, 0] - exact).max() < 1e-12


def test_complete_graph_endemic_level():
    adj = np.ones((3, 3)) - np.eye(3)
    spec = SystemSpec.from_arrays([adj], [np.ones(3)])
    traj = simulate(spec, InfectionState([[0.1, 0.2, 0.3]]), IntegratorConfig(dt=1e-2, t_end=60.0))
    assert np.allclose(traj.final.p, 0.5, atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_matches_high_order_reference(seed):
    spec, rng = random_spec(seed, m=3, n=4)
    p0 = InfectionState.random(3, 4, rng).p
    cfg = IntegratorConfig(dt=1e-3, t_end=5.0, record_every=500)
    traj = simulate(spec, InfectionState(p0), cfg)
    ref = reference_solution(p0, spec.betas, spec.deltas, 5.0, traj.times)
    assert np.abs(traj.states - ref).max() < 1e-9


def test_fourth_order_convergence():
    spec, rng = random_spec(4, m=2, n=4)
    p0 = InfectionState.random(2, 4, rng)
    ref = reference_solution(p0.p, spec.betas, spec.deltas, 2.0, [2.0])[-1]
    errs = []
    for dt in (0.1, 0.05):
        traj = simulate(spec, p0, IntegratorConfig(dt=dt, t_end=2.0))
        errs.append(np.abs(traj.final.p - ref).max())
    assert 12.0 < errs[0] / errs[1] < 20.0


def test_euler_is_first_order():
    spec, rng = random_spec(5, m=1, n=3)
    p0 = InfectionState.random(1, 3, rng)
    ref = reference_solution(p0.p, spec.betas, spec.deltas, 1.0, [1.0])[-1]
    errs = [
        np.abs(simulate(spec, p0, IntegratorConfig(dt=dt, t_end=1.0, method="euler")).final.p - ref).max()
        for dt in (0.01, 0.005)
    ]
    assert 1.7 < errs[0] / errs[1] < 2.3


def test_record_times_and_partial_last_step():
    spec, rng = random_spec(6)
    cfg = IntegratorConfig(dt=0.3, t_end=1.0, record_every=2)
    traj = simulate(spec, InfectionState.random(2, 5, rng), cfg)
    assert cfg.nsteps == 4
    assert np.allclose(traj.times, [0.0, 0.6, 1.0])
    one = simulate(spec, traj.state(0), IntegratorConfig(dt=0.3, t_end=1.0))
    assert np.allclose(one.times, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert np.array_equal(one.final.p, traj.final.p)


def test_zero_horizon():
    spec, rng = random_spec(7)
    p0 = InfectionState.random(2, 5, rng)
    traj = simulate(spec, p0, IntegratorConfig(t_end=0.0))
    assert len(traj) == 1 and np.array_equal(traj.final.p, p0.p)


def test_step_stays_in_set_and_matches_simulate():
    spec, rng = random_spec(8)
    s = InfectionState.random(2, 5, rng)
    nxt = step(s, spec, 0.01)
    traj = simulate(spec, s, IntegratorConfig(dt=0.01, t_end=0.01))
    assert np.array_equal(nxt.p, traj.final.p)
    assert nxt.t == pytest.approx(0.01)


def test_large_step_warns():
    b = 40.0 * (np.ones((4, 4)) - np.eye(4))
    spec = SystemSpec.from_arrays([b, b], np.full((2, 4), 0.1))
    p0 = InfectionState(np.full((2, 4), 0.45))
    with pytest.warns(StepSizeWarning):
        traj = simulate(spec, p0, IntegratorConfig(dt=0.2, t_end=2.0))
    assert traj.states.min() >= 0.0 and traj.states.sum(axis=1).max() <= 1.0 + 1e-15
    with pytest.warns(StepSizeWarning):
        step(p0, spec, 0.2)


def test_overflow_raises_blowup():
    b = 1e305 * (np.ones((3, 3)) - np.eye(3))
    spec = SystemSpec.from_arrays([b], [np.ones(3)])
    with pytest.raises(IntegrationBlowupError) as info, warnings.catch_warnings():
        warnings.simplefilter("ignore")
        simulate(spec, InfectionState([[0.1, 0.1, 0.1]]), IntegratorConfig(dt=1.0, t_end=3.0))
    assert info.value.t > 0


def test_config_validation():
    with pytest.raises(PreconditionError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(PreconditionError):
        IntegratorConfig(method="midpoint")
    with pytest.raises(PreconditionError):
        IntegratorConfig(record_every=0)


@given(st.integers(0, 100_000), st.integers(1, 3), st.integers(1, 6))
@settings(max_examples=25, deadline=None)
def test_invariant_set_without_repair(seed, m, n):
    rng = np.random.default_rng(seed)
    betas = np.array([random_irreducible(rng, n, high=3.0) for _ in range(m)])
    spec = SystemSpec.from_arrays(betas, rng.uniform(0.0, 2.0, (m, n)))
    traj = simulate(spec, InfectionState.random(m, n, rng), IntegratorConfig(dt=1e-3, t_end=3.0, record_every=100))
    assert traj.diagnostics["max_violation"] <= 1e-9


def test_callable_time_variation_matches_mobility_kernel():
    cfg = MobilityConfig.random(6, [0.8, 0.5], 3.0, seed=1)
    model = MobilityModel(cfg)
    deltas = np.full((2, 6), 0.3)
    p0 = InfectionState.random(2, 6, 3)
    icfg = IntegratorConfig(dt=1e-2, t_end=5.0, record_every=50)
    fast = simulate(SystemSpec.from_arrays(model.beta_at(0.0), deltas, model), p0, icfg)
    slow = simulate(SystemSpec.from_arrays(model.beta_at(0.0), deltas, model.beta_at), p0, icfg)
    assert np.abs(fast.states - slow.states).max() < 1e-12
    assert np.allclose(fast.diagnostics["positions"][-1], model.positions_at(5.0)[0], atol=1e-10)


def test_perturbation_is_held_between_redraws():
    spec, rng = random_spec(9, m=1, n=4)
    pert = BetaPerturbation(magnitude=0.5, interval=1.0, seed=4)
    icfg = IntegratorConfig(dt=0.01, t_end=3.0, record_every=50)
    traj = simulate(spec, InfectionState.random(1, 4, rng), icfg, perturbation=pert, spectral_trace=True)
    factors = pert.factors(3, (1, 4, 4))
    # replay by hand with the held factor in each unit interval
    p = traj.states[0]
    for j in range(3):
        seg = SystemSpec.from_arrays(spec.betas * factors[j], spec.deltas)
        p = simulate(seg, InfectionState(p), IntegratorConfig(dt=0.01, t_end=1.0)).final.p
        assert np.allclose(p, traj.states[2 * (j + 1)], atol=1e-13)
    s = traj.diagnostics["s"]
    # the sample closing an interval reports the factor that produced it
    assert s[0, 0] == s[2, 0] and s[0, 0] != s[3, 0]


def test_control_policy_events_and_held_boost():
    spec, rng = random_spec(10, m=2, n=5)
    policy = ControlPolicy(ControlConfig(budget=2.0, interval=0.5))
    icfg = IntegratorConfig(dt=0.01, t_end=2.0, record_every=25)
    traj = simulate(spec, InfectionState.random(2, 5, rng), icfg, control=policy, spectral_trace=True)
    assert [e.t for e in policy.events] == pytest.approx([0.0, 0.5, 1.0, 1.5])
    u = traj.diagnostics["u"]
    assert np.allclose(u.sum(axis=2), 2.0)
    # static beta: every allocation is identical
    assert np.allclose(u, u[0])
    assert np.all(traj.diagnostics["s_controlled"] <= traj.diagnostics["s"] + 1e-12)
    again = simulate(spec, traj.state(0), icfg, control=policy)
    assert len(policy.events) == 4 and np.array_equal(again.states, traj.states)


def test_beta_samples_static_shape():
    spec, rng = random_spec(11)
    traj = simulate(spec, InfectionState.random(2, 5, rng), IntegratorConfig(dt=0.1, t_end=1.0))
    assert beta_samples(traj, spec).shape == (11, 2, 5, 5)


def test_nonzero_start_time_rejected():
    spec, _ = random_spec(12)
    with pytest.raises(PreconditionError):
        simulate(spec, InfectionState.healthy(2, 5, t=1.0), IntegratorConfig(t_end=1.0))
