"""Random Fourier feature embeddings of policies and exact MMD.

A policy is represented by the mean discounted random-feature vector of its
trajectories. Distances between these vectors approximate the maximum mean
discrepancy (Gaussian kernel) between the policies' occupancy measures. The
exact kernel-trick MMD over explicit finite distributions is provided as an
independent oracle, along with a sweep that measures the approximation error
on small finite MDPs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import (FiniteMdp, Trajectory, exact_occupancy, geometric_indices,
                  sample_pair_indices)
from .errors import ConfigurationError, DomainError, ResourceError
from .seeding import derive_seed


@dataclass
class RunningNormalizer:
    """Per-coordinate running mean/variance, merged batch by batch."""

    dim: int
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        self.mean = np.zeros(self.dim) if self.mean is None else np.asarray(self.mean, float)
        self.m2 = np.zeros(self.dim) if self.m2 is None else np.asarray(self.m2, float)

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        n = x.shape[0]
        if n == 0:
            return
        batch_mean = x.mean(axis=0)
        batch_m2 = ((x - batch_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + batch_m2 + delta ** 2 * (self.count * n / total)
        self.count = total

    @property
    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        std = np.sqrt(self.m2 / self.count)
        return np.where(std < 1e-6, 1.0, std)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.asarray(x, dtype=float)
        return (x - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"dim": self.dim, "count": self.count,
                "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunningNormalizer":
        return cls(d["dim"], d["count"], np.array(d["mean"]), np.array(d["m2"]))


@dataclass
class RffMap:
    """Frozen random features ``sqrt(2/D) cos(W x + b)`` with ``W ~ N(0, sigma^-2 I)``.

    When ``state_dim`` is set, the first ``state_dim`` input coordinates are
    states and pass through the running normalizer before the features; the
    remaining coordinates (actions) are used raw.
    """

    seed: int
    D: int
    d: int
    sigma: float
    W: np.ndarray
    b: np.ndarray
    state_dim: int | None = None
    normalizer: RunningNormalizer | None = None

    @property
    def scale(self) -> float:
        return math.sqrt(2.0 / self.D)

    def features(self, x: np.ndarray) -> np.ndarray:
        """Features of raw concatenated inputs ``(..., d) -> (..., D)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ConfigurationError(f"input dimension {x.shape[-1]} != {self.d}")
        # explicit accumulation keeps every row independent of its batch
        acc = np.broadcast_to(self.b, x.shape[:-1] + (self.D,)).copy()
        for j in range(self.d):
            acc += x[..., j, None] * self.W[:, j]
        return self.scale * np.cos(acc)

    def inputs(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if self.normalizer is not None:
            states = self.normalizer.normalize(states)
        return np.concatenate([states, actions], axis=-1)

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "D": self.D, "d": self.d, "sigma": self.sigma,
                "state_dim": self.state_dim,
                "normalizer": None if self.normalizer is None else self.normalizer.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "RffMap":
        rff = sample_rff(data["seed"], data["D"], data["d"], data["sigma"], data["state_dim"])
        if data.get("normalizer") is not None:
            rff.normalizer = RunningNormalizer.from_dict(data["normalizer"])
        return rff


def sample_rff(seed: int, D: int, d: int, sigma: float, state_dim: int | None = None) -> RffMap:
    if D < 1 or d < 1:
        raise ConfigurationError("D and d must be positive")
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if state_dim is not None and not 0 < state_dim <= d:
        raise ConfigurationError("state_dim must lie in [1, d]")
    rng = np.random.default_rng(int(seed))
    W = rng.standard_normal((D, d)) / sigma
    b = rng.uniform(0.0, 2.0 * np.pi, size=D)
    normalizer = RunningNormalizer(state_dim) if state_dim is not None else None
    return RffMap(int(seed), int(D), int(d), float(sigma), W, b, state_dim, normalizer)


def default_sigma(state_dim: int, action_dim: int) -> float:
    return math.sqrt(state_dim + action_dim)


def phi(rff: RffMap, state, action) -> np.ndarray:
    return rff.features(rff.inputs(state, action))


def discount_weights(gamma: float, T: int) -> np.ndarray:
    return (1.0 - gamma) * np.power(gamma, np.arange(T, dtype=float))


def embed_trajectory(rff: RffMap, traj: Trajectory, gamma: float) -> np.ndarray:
    """``(1 - gamma) * sum_t gamma**t phi(s_t, a_t)`` over the realized steps."""
    if len(traj) == 0:
        raise DomainError("empty trajectory")
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    return embed_batch(rff, traj.states[None], traj.actions[None], gamma)[0]


def embed_batch(rff: RffMap, states: np.ndarray, actions: np.ndarray, gamma: float) -> np.ndarray:
    """Trajectory embeddings for ``(B, T, .)`` equal-length episodes."""
    feats = phi(rff, states, actions)
    w = discount_weights(gamma, feats.shape[1])
    return (feats * w[None, :, None]).sum(axis=1)


@dataclass
class PolicyEmbedding:
    psi: np.ndarray
    n_trajectories: int


def embed_policy(rff: RffMap, trajectories: Sequence[Trajectory], gamma: float) -> PolicyEmbedding:
    if len(trajectories) == 0:
        raise DomainError("need at least one trajectory")
    zs = np.stack([embed_trajectory(rff, t, gamma) for t in trajectories])
    return PolicyEmbedding(zs.mean(axis=0), len(trajectories))


def rff_mmd(psi1, psi2) -> float:
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    if psi1.shape != psi2.shape:
        raise ConfigurationError(f"embedding shapes differ: {psi1.shape} vs {psi2.shape}")
    return float(np.linalg.norm(psi1 - psi2))


# --------------------------------------------------------------------------
# exact MMD


def gaussian_kernel(X: np.ndarray, Y: np.ndarray, sigma: float) -> np.ndarray:
    sq = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-sq / (2.0 * sigma ** 2))


def _as_distribution(dist):
    atoms, weights = dist
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (atoms.shape[0],):
        raise ConfigurationError("need one weight per atom")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise DomainError("weights must be nonnegative and sum to 1")
    return atoms, weights


def exact_mmd(P, Q, sigma: float) -> float:
    """Gaussian-kernel MMD between finite distributions given as ``(atoms, weights)``."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    X, p = _as_distribution(P)
    Y, q = _as_distribution(Q)
    if X.shape[1] != Y.shape[1]:
        raise ConfigurationError("atoms of P and Q have different dimensions")
    sq = (p @ gaussian_kernel(X, X, sigma) @ p + q @ gaussian_kernel(Y, Y, sigma) @ q
          - 2.0 * p @ gaussian_kernel(X, Y, sigma) @ q)
    if sq < 0:
        if sq < -1e-12:
            raise ArithmeticError(f"negative squared MMD {sq}")
        sq = 0.0
    return math.sqrt(sq)


# --------------------------------------------------------------------------
# approximation sweep on finite MDPs


@dataclass(frozen=True)
class SweepRow:
    D: int
    n: int
    seed: int
    pair: int
    exact: float
    phi_dist: float
    psi_dist: float

    @property
    def phi_error(self) -> float:
        return abs(self.phi_dist - self.exact)

    @property
    def psi_error(self) -> float:
        return abs(self.psi_dist - self.exact)


def horizon_for_bias(gamma: float, bias: float = 1e-6) -> int:
    """Smallest ``T`` with ``sqrt(2) * gamma**T <= bias``."""
    return max(1, math.ceil(math.log(bias / math.sqrt(2.0)) / math.log(gamma)))


def theorem1_sweep(fmdp: FiniteMdp, policy_pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                   D_grid: Sequence[int], n_grid: Sequence[int], seeds: Sequence[int],
                   sigma: float | None = None, horizon: int | None = None,
                   max_pairs: int = 10_000) -> list[SweepRow]:
    """Compare both sampled embedding distances against the exact MMD.

    For every seed, ``max(n_grid)`` episodes are simulated per policy and the
    first ``n`` are used for each ``n`` in the grid. The single-sample
    estimator takes one state-action pair per episode at a geometric time
    index; the trajectory estimator uses the discounted sum over the episode.
    Discrete pairs are embedded as one-hot ``[state; action]`` vectors.
    """
    if not policy_pairs or not D_grid or not n_grid or not seeds:
        raise ConfigurationError("grids must be nonempty")
    if fmdp.n_pairs > max_pairs:
        raise ResourceError(f"{fmdp.n_pairs} state-action pairs exceed the cap of {max_pairs}")
    X = fmdp.pair_vectors()
    d = X.shape[1]
    sigma = default_sigma(fmdp.n_states, fmdp.n_actions) if sigma is None else sigma
    gamma = fmdp.gamma
    T = horizon_for_bias(gamma) if horizon is None else horizon
    n_max = max(n_grid)
    SA = fmdp.n_pairs
    w = discount_weights(gamma, T)

    exact = []
    for pi_p, pi_q in policy_pairs:
        rho_p = exact_occupancy(fmdp, pi_p).ravel()
        rho_q = exact_occupancy(fmdp, pi_q).ravel()
        exact.append(exact_mmd((X, rho_p / rho_p.sum()), (X, rho_q / rho_q.sum()), sigma))

    rows = []
    for seed in seeds:
        rng = np.random.default_rng(derive_seed(seed, 1))
        # per policy: cumulative means of visitation weights over episodes
        stats = []
        for pair in policy_pairs:
            per_policy = []
            for pi in pair:
                idx = sample_pair_indices(fmdp, pi, n_max, T, rng)
                traj_w = np.zeros((n_max, SA))
                np.add.at(traj_w, (np.arange(n_max)[:, None], idx), w[None, :])
                t = geometric_indices(gamma, T, n_max, rng)
                single = np.zeros((n_max, SA))
                single[np.arange(n_max), idx[np.arange(n_max), t]] = 1.0
                counts = np.arange(1, n_max + 1)[:, None]
                per_policy.append((np.cumsum(single, axis=0) / counts,
                                   np.cumsum(traj_w, axis=0) / counts))
            stats.append(per_policy)
        for D in D_grid:
            rff = sample_rff(derive_seed(seed, 2, D), D, d, sigma)
            Phi = rff.features(X)
            for k, ((sp, tp), (sq, tq)) in enumerate(stats):
                for n in n_grid:
                    phi_dist = float(np.linalg.norm((sp[n - 1] - sq[n - 1]) @ Phi))
                    psi_dist = float(np.linalg.norm((tp[n - 1] - tq[n - 1]) @ Phi))
                    rows.append(SweepRow(int(D), int(n), int(seed), k, exact[k],
                                         phi_dist, psi_dist))
    return rows


def default_sweep_problem(n_states: int = 5, n_actions: int = 3, gamma: float = 0.9,
                          n_pairs: int = 10, seed: int = 0):
    """Random finite MDP with random stochastic policy pairs."""
    rng = np.random.default_rng(derive_seed(seed, 3))
    fmdp = FiniteMdp.random(n_states, n_actions, gamma, rng)
    pairs = [(fmdp.random_policy(rng), fmdp.random_policy(rng)) for _ in range(n_pairs)]
    return fmdp, pairs
