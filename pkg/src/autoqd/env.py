"""MDP abstractions, the PointMass2D environment and exact finite-MDP tools."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .policy import Policy, PolicyArchitecture, forward, rescale, unpack


@dataclass(frozen=True)
class MdpSpec:
    state_dim: int
    action_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    gamma: float
    horizon: int

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1 or self.horizon < 1:
            raise ConfigurationError("state_dim, action_dim and horizon must be positive")
        low = tuple(float(v) for v in self.action_low)
        high = tuple(float(v) for v in self.action_high)
        if len(low) != self.action_dim or len(high) != self.action_dim:
            raise ConfigurationError("action bounds must have length action_dim")
        if not all(lo < hi for lo, hi in zip(low, high)):
            raise ConfigurationError("action_low must be below action_high")
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False


@dataclass
class Trajectory:
    """One episode stored column-wise; ``transitions`` gives the row view."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        n = len(self.rewards)
        if not (len(self.states) == len(self.actions) == len(self.next_states) == n):
            raise ConfigurationError("trajectory columns have different lengths")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def transitions(self) -> list[Transition]:
        n = len(self)
        return [Transition(self.states[t], self.actions[t], float(self.rewards[t]),
                           self.next_states[t], self.terminal and t == n - 1)
                for t in range(n)]

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Trajectory":
        if not transitions:
            raise DomainError("empty trajectory")
        for a, b in zip(transitions[:-1], transitions[1:]):
            if a.terminal:
                raise ConfigurationError("terminal transition before the end of a trajectory")
            if not np.array_equal(a.next_state, b.state):
                raise ConfigurationError("consecutive transitions are not chained")
        return cls(np.array([t.state for t in transitions], dtype=float),
                   np.array([t.action for t in transitions], dtype=float),
                   np.array([t.reward for t in transitions], dtype=float),
                   np.array([t.next_state for t in transitions], dtype=float),
                   bool(transitions[-1].terminal))


@dataclass
class TrajectoryBatch:
    """Equal-length episodes stacked along a leading batch axis."""

    states: np.ndarray       # (B, T, state_dim)
    actions: np.ndarray      # (B, T, action_dim)
    rewards: np.ndarray      # (B, T)
    next_states: np.ndarray  # (B, T, state_dim)

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.rewards[i], self.next_states[i])

    def __iter__(self) -> Iterator[Trajectory]:
        return (self.trajectory(i) for i in range(len(self)))

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def discounted_return(traj: Trajectory, gamma: float) -> float:
    if len(traj) == 0:
        raise DomainError("empty trajectory")
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    discounts = np.power(float(gamma), np.arange(len(traj), dtype=float))
    return float(np.dot(discounts, traj.rewards))


# --------------------------------------------------------------------------
# PointMass2D


@dataclass(frozen=True)
class PointMassConfig:
    arena_halfwidth: float = 1.0
    force_scale: float = 1.0
    friction: float = 0.5
    dt: float = 0.1
    max_speed: float = 1.0
    noise_std: float = 0.0
    horizon: int = 50
    gamma: float = 0.98

    def __post_init__(self):
        if self.arena_halfwidth <= 0:
            raise DomainError("arena_halfwidth must be positive")
        if self.dt <= 0:
            raise DomainError("dt must be positive")
        if self.friction < 0:
            raise DomainError("friction must be nonnegative")
        if self.max_speed <= 0 or self.force_scale <= 0:
            raise DomainError("max_speed and force_scale must be positive")
        if self.noise_std < 0:
            raise DomainError("noise_std must be nonnegative")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be positive")


def vary_env(base: PointMassConfig, friction_scale: float = 1.0,
             mass_scale: float = 1.0) -> PointMassConfig:
    """Scaled copy of ``base``; a heavier point gets proportionally less force."""
    if friction_scale <= 0 or mass_scale <= 0:
        raise DomainError("scales must be positive")
    return dataclasses.replace(base, friction=base.friction * friction_scale,
                               force_scale=base.force_scale / mass_scale)


class PointMass2D:
    """A point pushed around a square arena by a bounded 2-D force.

    State is ``(x, y, vx, vy)``, actions lie in ``[-1, 1]^2``. Each step::

        pos' = pos + dt * vel
        vel' = clip(vel + dt * (force_scale * a - friction * vel) + noise, +-max_speed)

    ``pos'`` is clamped to the arena and the velocity component along a clamped
    axis is zeroed. The reward is the realized forward (x) velocity shifted by
    ``max_speed``, so it lies in ``[0, 2 * max_speed]`` and returns are
    nonnegative. Episodes always run for ``horizon`` steps.
    """

    name = "point_mass"
    gt_lower = -1.0
    gt_upper = 1.0
    gt_dim = 2
    min_objective = 0.0

    def __init__(self, config: PointMassConfig | None = None):
        self.config = config or PointMassConfig()
        c = self.config
        self.spec = MdpSpec(4, 2, (-1.0, -1.0), (1.0, 1.0), c.gamma, c.horizon)

    @property
    def deterministic(self) -> bool:
        return self.config.noise_std == 0.0

    def initial_state(self) -> np.ndarray:
        return np.zeros(4)

    def step(self, states: np.ndarray, actions: np.ndarray, noise: np.ndarray | None = None):
        """Advance ``(B, 4)`` states by ``(B, 2)`` actions; returns ``(next, reward)``."""
        c = self.config
        pos, vel = states[..., :2], states[..., 2:]
        a = np.clip(actions, -1.0, 1.0)
        new_pos = pos + c.dt * vel
        new_vel = vel + c.dt * (c.force_scale * a - c.friction * vel)
        if noise is not None:
            new_vel = new_vel + c.noise_std * np.sqrt(c.dt) * noise
        new_vel = np.clip(new_vel, -c.max_speed, c.max_speed)
        hw = c.arena_halfwidth
        hit = np.abs(new_pos) > hw
        new_pos = np.clip(new_pos, -hw, hw)
        new_vel = np.where(hit, 0.0, new_vel)
        reward = (new_pos[..., 0] - pos[..., 0]) / c.dt + c.max_speed
        return np.concatenate([new_pos, new_vel], axis=-1), reward

    def _noise(self, seeds: Sequence[int]) -> np.ndarray | None:
        if self.deterministic:
            return None
        T = self.config.horizon
        return np.stack([np.random.default_rng(int(s)).standard_normal((T, 2)) for s in seeds])

    def rollout_batch(self, params: np.ndarray, arch: PolicyArchitecture,
                      seeds: Sequence[int]) -> TrajectoryBatch:
        """Roll out a ``(B, P)`` batch of policies, one episode per seed."""
        params = np.atleast_2d(np.asarray(params, dtype=float))
        if arch.input_dim != self.spec.state_dim or arch.output_dim != self.spec.action_dim:
            raise ConfigurationError(
                f"policy maps {arch.input_dim}->{arch.output_dim}, environment needs "
                f"{self.spec.state_dim}->{self.spec.action_dim}")
        if len(seeds) != params.shape[0]:
            raise ConfigurationError("need one seed per policy row")
        B, T = params.shape[0], self.config.horizon
        layers = unpack(params, arch)
        noise = self._noise(seeds)
        states = np.empty((B, T, 4))
        actions = np.empty((B, T, 2))
        rewards = np.empty((B, T))
        next_states = np.empty((B, T, 4))
        s = np.tile(self.initial_state(), (B, 1))
        low, high = self.spec.action_low, self.spec.action_high
        for t in range(T):
            a = rescale(forward(layers, s), low, high)
            s_next, r = self.step(s, a, None if noise is None else noise[:, t])
            states[:, t] = s
            actions[:, t] = a
            rewards[:, t] = r
            next_states[:, t] = s_next
            s = s_next
        return TrajectoryBatch(states, actions, rewards, next_states)

    def gt_descriptor(self, traj: Trajectory) -> np.ndarray:
        """Final position divided by the arena half-width."""
        return traj.next_states[-1, :2] / self.config.arena_halfwidth

    def gt_descriptors(self, batch: TrajectoryBatch) -> np.ndarray:
        return batch.next_states[:, -1, :2] / self.config.arena_halfwidth


def rollout(env: PointMass2D, policy: Policy, seed: int) -> Trajectory:
    """One deterministic episode of ``policy`` in ``env`` for ``seed``."""
    if not 0 <= int(seed) < 2 ** 64:
        raise ConfigurationError("seed must be a 64-bit unsigned value")
    return env.rollout_batch(policy.params[None, :], policy.arch, [int(seed)]).trajectory(0)


# --------------------------------------------------------------------------
# finite MDPs


@dataclass
class FiniteMdp:
    transition_tensor: np.ndarray  # (S, A, S)
    reward_table: np.ndarray       # (S, A)
    initial_dist: np.ndarray       # (S,)
    gamma: float
    n_states: int = field(init=False)
    n_actions: int = field(init=False)

    def __post_init__(self):
        P = np.asarray(self.transition_tensor, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigurationError(f"transition tensor must be SxAxS, got {P.shape}")
        self.transition_tensor = P
        self.n_states, self.n_actions = P.shape[0], P.shape[1]
        self.reward_table = np.asarray(self.reward_table, dtype=float)
        self.initial_dist = np.asarray(self.initial_dist, dtype=float)
        if self.reward_table.shape != (self.n_states, self.n_actions):
            raise ConfigurationError("reward table must be SxA")
        if self.initial_dist.shape != (self.n_states,):
            raise ConfigurationError("initial distribution must have length S")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-12):
            raise DomainError("transition rows must be probability distributions")
        if np.any(self.initial_dist < 0) or abs(self.initial_dist.sum() - 1.0) > 1e-12:
            raise DomainError("initial distribution must sum to 1")
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")

    @classmethod
    def random(cls, n_states: int, n_actions: int, gamma: float,
               rng: np.random.Generator) -> "FiniteMdp":
        P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        P /= P.sum(axis=2, keepdims=True)
        R = rng.standard_normal((n_states, n_actions))
        init = rng.dirichlet(np.ones(n_states))
        init /= init.sum()
        return cls(P, R, init, gamma)

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def pair_vectors(self) -> np.ndarray:
        """One-hot ``[state; action]`` vectors, row ``s * A + a``."""
        S, A = self.n_states, self.n_actions
        X = np.zeros((S * A, S + A))
        for s in range(S):
            for a in range(A):
                X[s * A + a, s] = 1.0
                X[s * A + a, S + a] = 1.0
        return X

    def random_policy(self, rng: np.random.Generator) -> np.ndarray:
        pi = rng.dirichlet(np.ones(self.n_actions), size=self.n_states)
        return pi / pi.sum(axis=1, keepdims=True)

    def check_policy(self, policy_table: np.ndarray) -> np.ndarray:
        pi = np.asarray(policy_table, dtype=float)
        if pi.shape != (self.n_states, self.n_actions):
            raise ConfigurationError("policy table must be SxA")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-10):
            raise DomainError("policy rows must be probability distributions")
        return pi

    def state_transition(self, policy_table: np.ndarray) -> np.ndarray:
        """State-to-state kernel ``P_pi[s, s']`` under the policy."""
        return np.einsum("sa,sat->st", policy_table, self.transition_tensor)


def exact_occupancy(fmdp: FiniteMdp, policy_table: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Discounted state-action visitation ``rho[s, a]``.

    Pushes the state distribution forward until ``gamma**t < tol``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    pi = fmdp.check_policy(policy_table)
    P_pi = fmdp.state_transition(pi)
    g = fmdp.gamma
    d = fmdp.initial_dist.copy()
    rho = np.zeros_like(pi)
    weight = 1.0
    while weight >= tol:
        rho += (1.0 - g) * weight * d[:, None] * pi
        d = d @ P_pi
        weight *= g
    return rho


def truncated_occupancy(fmdp: FiniteMdp, policy_table: np.ndarray, horizon: int) -> np.ndarray:
    """``(1 - gamma) * sum_{t < horizon} gamma**t P(S_t = s, A_t = a)`` (not normalized)."""
    pi = fmdp.check_policy(policy_table)
    P_pi = fmdp.state_transition(pi)
    g = fmdp.gamma
    d = fmdp.initial_dist.copy()
    out = np.zeros_like(pi)
    for t in range(horizon):
        out += (1.0 - g) * g ** t * d[:, None] * pi
        d = d @ P_pi
    return out


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    idx = (u[:, None] >= cum).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_pair_indices(fmdp: FiniteMdp, policy_table: np.ndarray, n: int, horizon: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Simulate ``n`` episodes; returns flat pair indices ``s * A + a`` of shape ``(n, horizon)``."""
    pi = fmdp.check_policy(policy_table)
    P = fmdp.transition_tensor
    s = _categorical(np.tile(fmdp.initial_dist, (n, 1)), rng)
    out = np.empty((n, horizon), dtype=np.int64)
    for t in range(horizon):
        a = _categorical(pi[s], rng)
        out[:, t] = s * fmdp.n_actions + a
        s = _categorical(P[s, a], rng)
    return out


def geometric_indices(gamma: float, horizon: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Time indices with ``P(t) proportional to gamma**t`` on ``0 <= t < horizon``.

    Draws past the horizon are redrawn.
    """
    t = rng.geometric(1.0 - gamma, size=n) - 1
    bad = t >= horizon
    while np.any(bad):
        t[bad] = rng.geometric(1.0 - gamma, size=int(bad.sum())) - 1
        bad = t >= horizon
    return t
