import numpy as np
import pytest
from hypothesis import given, strategies as st

from autoqd.env import (FiniteMdp, MdpSpec, PointMass2D, PointMassConfig, Trajectory,
                        Transition, discounted_return, exact_occupancy, geometric_indices,
                        rollout, sample_pair_indices, truncated_occupancy, vary_env)
from autoqd.errors import ConfigurationError, DomainError
from autoqd.policy import Policy, PolicyArchitecture

ARCH = PolicyArchitecture.for_env(4, 2, (8,))


def _traj(rewards):
    n = len(rewards)
    return Trajectory(np.zeros((n, 1)), np.zeros((n, 1)), np.array(rewards, float),
                      np.zeros((n, 1)))


def test_discounted_return_examples():
    assert discounted_return(_traj([1, 1, 1]), 0.5) == pytest.approx(1.75)
    assert discounted_return(_traj([3, 5, 7]), 0.0) == 3.0
    assert discounted_return(_traj([0, 0]), 0.9) == 0.0
    with pytest.raises(DomainError):
        discounted_return(_traj([]), 0.9)


def test_spec_validation():
    with pytest.raises(DomainError):
        MdpSpec(2, 1, (-1,), (1,), 1.0, 10)
    with pytest.raises(ConfigurationError):
        MdpSpec(2, 1, (1,), (-1,), 0.9, 10)


def test_trajectory_roundtrip_and_chaining():
    env = PointMass2D()
    traj = rollout(env, Policy(ARCH, np.full(ARCH.param_count, 0.3)), 0)
    again = Trajectory.from_transitions(traj.transitions)
    assert np.array_equal(again.states, traj.states)
    assert np.array_equal(traj.next_states[:-1], traj.states[1:])
    bad = traj.transitions[:2]
    bad[1] = Transition(bad[1].state + 1, bad[1].action, 0.0, bad[1].next_state)
    with pytest.raises(ConfigurationError):
        Trajectory.from_transitions(bad)


def test_rollout_deterministic_and_zero_policy_stays():
    env = PointMass2D()
    p = Policy(ARCH, np.random.default_rng(2).standard_normal(ARCH.param_count))
    a, b = rollout(env, p, 11), rollout(env, p, 11)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.rewards, b.rewards)
    z = rollout(env, Policy(ARCH, np.zeros(ARCH.param_count)), 5)
    assert len(z) == env.config.horizon
    assert np.all(z.actions == 0.0) and np.all(z.next_states == 0.0)


def test_constant_action_hand_integration():
    c = PointMassConfig(force_scale=2.0, friction=0.5, dt=0.1, max_speed=10.0)
    env = PointMass2D(c)
    s = np.zeros((1, 4))
    a = np.array([[1.0, 0.0]])
    rewards = []
    for _ in range(3):
        s, r = env.step(s, a)
        rewards.append(r[0])
    # vel: 0 -> 0.2 -> 0.2 + 0.1*(2 - 0.1) = 0.39 -> 0.39 + 0.1*(2 - 0.195) = 0.5705
    # pos: 0 -> 0 -> 0.02 -> 0.059
    assert s[0, 0] == pytest.approx(0.059, abs=1e-12)
    assert s[0, 2] == pytest.approx(0.5705, abs=1e-12)
    assert s[0, 1] == 0.0 and s[0, 3] == 0.0
    assert np.allclose(rewards, np.array([0.0, 0.2, 0.39]) + c.max_speed)


def test_walls_clamp_and_zero_velocity():
    env = PointMass2D()
    s, _ = env.step(np.array([[0.98, 0.0, 0.5, -0.3]]), np.zeros((1, 2)))
    assert s[0, 0] == 1.0 and s[0, 2] == 0.0 and s[0, 3] != 0.0


@given(st.integers(0, 2 ** 32), st.floats(0.1, 30.0))
def test_gt_descriptor_in_unit_box(seed, scale):
    env = PointMass2D(PointMassConfig(horizon=25))
    r = np.random.default_rng(seed)
    batch = env.rollout_batch(scale * r.standard_normal((4, ARCH.param_count)), ARCH, [0] * 4)
    d = env.gt_descriptors(batch)
    assert np.all(np.abs(d) <= 1.0)
    assert np.array_equal(d[0], env.gt_descriptor(batch.trajectory(0)))
    assert np.all(batch.rewards >= 0.0)


def test_rollout_dimension_mismatch():
    env = PointMass2D()
    with pytest.raises(ConfigurationError):
        env.rollout_batch(np.zeros((1, 10)), PolicyArchitecture((3, 2)), [0])


def test_noise_depends_on_seed_only():
    env = PointMass2D(PointMassConfig(noise_std=0.3))
    p = np.random.default_rng(0).standard_normal(ARCH.param_count)
    b1 = env.rollout_batch(np.stack([p, p]), ARCH, [1, 2])
    b2 = env.rollout_batch(p[None], ARCH, [2])
    assert not np.array_equal(b1.states[0], b1.states[1])
    assert np.array_equal(b1.states[1], b2.states[0])


def test_vary_env():
    base = PointMassConfig(friction=0.4, force_scale=2.0)
    assert vary_env(base, 1.0, 1.0) == base
    assert vary_env(base, friction_scale=2).friction == 0.8
    assert vary_env(base, friction_scale=2).force_scale == 2.0
    assert vary_env(base, mass_scale=2).force_scale == 1.0
    assert base.friction == 0.4
    with pytest.raises(DomainError):
        vary_env(base, 0.0)


def test_config_validation():
    for bad in ({"arena_halfwidth": 0}, {"dt": 0}, {"friction": -1}):
        with pytest.raises(DomainError):
            PointMassConfig(**bad)


# --------------------------------------------------------------------------
# finite MDPs


def test_single_pair_occupancy():
    fmdp = FiniteMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), np.ones(1), 0.9)
    assert np.allclose(exact_occupancy(fmdp, np.ones((1, 1))), [[1.0]])


def test_two_state_cycle_closed_form():
    # deterministic cycle 0 -> 1 -> 0 regardless of action, start in 0
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 0] = 1.0
    g = 0.8
    fmdp = FiniteMdp(P, np.zeros((2, 2)), np.array([1.0, 0.0]), g)
    rho = exact_occupancy(fmdp, np.full((2, 2), 0.5))
    # state 0 at even times: (1-g) / (1-g^2) = 1 / (1+g)
    p0 = 1.0 / (1.0 + g)
    assert np.allclose(rho, [[p0 / 2, p0 / 2], [(1 - p0) / 2, (1 - p0) / 2]], atol=1e-11)


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 4), st.floats(0.1, 0.95))
def test_occupancy_is_distribution(seed, S, A, g):
    r = np.random.default_rng(seed)
    fmdp = FiniteMdp.random(S, A, g, r)
    rho = exact_occupancy(fmdp, fmdp.random_policy(r))
    assert np.all(rho >= 0) and abs(rho.sum() - 1.0) < 1e-10


def test_occupancy_matches_linear_solve():
    r = np.random.default_rng(3)
    fmdp = FiniteMdp.random(4, 3, 0.9, r)
    pi = fmdp.random_policy(r)
    P_pi = fmdp.state_transition(pi)
    d = (1 - 0.9) * np.linalg.solve(np.eye(4) - 0.9 * P_pi.T, fmdp.initial_dist)
    assert np.allclose(exact_occupancy(fmdp, pi), d[:, None] * pi, atol=1e-11)


def test_non_stochastic_policy_rejected():
    fmdp = FiniteMdp.random(3, 2, 0.9, np.random.default_rng(0))
    with pytest.raises(DomainError):
        exact_occupancy(fmdp, np.full((3, 2), 0.7))
    with pytest.raises(DomainError):
        FiniteMdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), np.array([0.5, 0.5]), 0.9)


def test_truncated_occupancy_converges():
    r = np.random.default_rng(1)
    fmdp = FiniteMdp.random(4, 2, 0.7, r)
    pi = fmdp.random_policy(r)
    full = exact_occupancy(fmdp, pi)
    for T in (1, 5, 20):
        gap = np.abs(full - truncated_occupancy(fmdp, pi, T)).sum()
        assert gap == pytest.approx(0.7 ** T, rel=1e-6)


def test_sampled_visits_match_occupancy():
    r = np.random.default_rng(5)
    fmdp = FiniteMdp.random(3, 2, 0.8, r)
    pi = fmdp.random_policy(r)
    idx = sample_pair_indices(fmdp, pi, 40_000, 60, r)
    t = geometric_indices(0.8, 60, 40_000, r)
    draws = idx[np.arange(40_000), t]
    freq = np.bincount(draws, minlength=6) / 40_000
    assert np.abs(freq - exact_occupancy(fmdp, pi).ravel()).max() < 0.015


def test_geometric_indices_truncated():
    t = geometric_indices(0.95, 7, 5000, np.random.default_rng(0))
    assert t.min() >= 0 and t.max() < 7
