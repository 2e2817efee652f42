"""Population metrics: GT QD score, Vendi scores, descriptor stability and adaptation.

Vendi scores use a Gaussian kernel over policy embeddings computed with a
dedicated evaluation feature map, larger than and independent from the one
used during training. Its bandwidth comes from a median heuristic: a pair of
policies at the median squared distance gets similarity exactly 0.5.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import seeding
from .archive import ArchiveConfig, GridArchive, Occupant
from .embedding import RffMap, default_sigma, embed_batch, sample_rff
from .errors import ConfigurationError, DomainError
from .env import PointMass2D, PointMassConfig, vary_env
from .policy import PolicyArchitecture

log = logging.getLogger(__name__)

MEDIAN_SUBSAMPLE = 1000
PSD_TOLERANCE = -1e-8


# --------------------------------------------------------------------------
# kernels and Vendi scores


@dataclass
class KernelMatrix:
    K: np.ndarray
    gamma_k: float | None   # None when every embedding was identical
    median_sq: float

    @property
    def n(self) -> int:
        return self.K.shape[0]


def pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def build_kernel(embeddings, rng: np.random.Generator | None = None) -> KernelMatrix:
    """Median-heuristic Gaussian kernel ``exp(-gamma_k ||x - y||^2)``.

    ``gamma_k = ln 2 / median`` of the off-diagonal squared distances. With
    more than 1000 rows the median is taken over a random subsample of 1000.
    """
    X = np.asarray(embeddings, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DomainError("need at least two embeddings to build a kernel")
    n = X.shape[0]
    sample = X
    if n > MEDIAN_SUBSAMPLE:
        rng = rng if rng is not None else np.random.default_rng(0)
        sample = X[np.sort(rng.choice(n, MEDIAN_SUBSAMPLE, replace=False))]
    d_sample = pairwise_sq_dists(sample)
    iu = np.triu_indices(sample.shape[0], k=1)
    median = float(np.median(d_sample[iu]))
    if median <= 0.0:
        log.info("all sampled embeddings coincide; using an all-ones kernel")
        return KernelMatrix(np.ones((n, n)), None, 0.0)
    gamma_k = math.log(2.0) / median
    K = np.exp(-gamma_k * pairwise_sq_dists(X))
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return KernelMatrix(K, gamma_k, median)


def _as_matrix(K) -> np.ndarray:
    K = K.K if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] == 0:
        raise DomainError("kernel must be a nonempty square matrix")
    return K


def vendi(K) -> float:
    """``exp(entropy)`` of the normalized, zero-clamped eigenvalues of ``K``."""
    K = _as_matrix(K)
    lam = np.linalg.eigvalsh(0.5 * (K + K.T))
    if lam.min() < PSD_TOLERANCE * max(1.0, lam.max()):
        log.warning("kernel has eigenvalue %.3g below tolerance", lam.min())
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    if total <= 0:
        raise DomainError("kernel has no positive eigenvalue")
    p = lam / total
    p = p[p > 0]
    return float(np.exp(-np.sum(p * np.log(p))))


def qvs(fitness, K, offset: float, divisor: float) -> float:
    """Quality-weighted Vendi score: mean scaled fitness times ``vendi(K)``."""
    if not divisor > 0:
        raise DomainError("divisor must be positive")
    f = np.asarray(fitness, dtype=float)
    K = _as_matrix(K)
    if f.shape != (K.shape[0],):
        raise ConfigurationError("need one fitness value per kernel row")
    scaled = (f + offset) / divisor
    tol = 1e-12
    if np.any(scaled < -tol) or np.any(scaled > 1.0 + tol):
        raise DomainError("scaled fitness must lie in [0, 1]; check offset and divisor")
    return float(np.clip(scaled, 0.0, 1.0).mean() * vendi(K))


# --------------------------------------------------------------------------
# GT QD score


def gt_qd_score(population: Sequence[Occupant],
                gt_descriptor_fn: Callable[[Occupant], np.ndarray] | None,
                gt_archive_config: ArchiveConfig) -> float:
    """QD score of ``population`` inserted elitist-style into a fresh hand-crafted grid."""
    return gt_archive(population, gt_descriptor_fn, gt_archive_config).qd_score()


def gt_archive(population: Sequence[Occupant],
               gt_descriptor_fn: Callable[[Occupant], np.ndarray] | None,
               gt_archive_config: ArchiveConfig) -> GridArchive:
    if gt_descriptor_fn is None:
        raise ConfigurationError("environment has no hand-crafted descriptor")
    archive = GridArchive(gt_archive_config, soft=False)
    for occ in population:
        archive.insert(occ.moved(gt_descriptor_fn(occ)))
    return archive


# --------------------------------------------------------------------------
# population evaluation


def make_eval_rff(seed: int, dim: int, env: PointMass2D) -> RffMap:
    """Evaluation feature map, independent of every training map."""
    s = env.spec
    return sample_rff(seeding.derive_seed(seed, seeding.EVAL_RFF), dim,
                      s.state_dim + s.action_dim, default_sigma(s.state_dim, s.action_dim),
                      s.state_dim)


@dataclass
class PopulationRollouts:
    params: np.ndarray      # (n, P)
    states: np.ndarray      # (n, E, T, state_dim)
    actions: np.ndarray     # (n, E, T, action_dim)
    returns: np.ndarray     # (n, E)
    gt: np.ndarray          # (n, E, gt_dim)

    @property
    def fitness(self) -> np.ndarray:
        return self.returns.mean(axis=1)

    @property
    def gt_mean(self) -> np.ndarray:
        return self.gt.mean(axis=1)


def rollout_population(env: PointMass2D, arch: PolicyArchitecture, params,
                       episodes: int, seed: int, stream: int = 0) -> PopulationRollouts:
    params = np.atleast_2d(np.asarray(params, dtype=float))
    n, E = params.shape[0], int(episodes)
    if E < 1:
        raise ConfigurationError("episodes must be positive")
    T = env.config.horizon
    if n == 0:
        s = env.spec
        return PopulationRollouts(params, np.empty((0, E, T, s.state_dim)),
                                  np.empty((0, E, T, s.action_dim)), np.empty((0, E)),
                                  np.empty((0, E, env.gt_dim)))
    seeds = [seeding.derive_seed(seed, seeding.EVAL, stream, ep) for ep in range(E)]
    batch = env.rollout_batch(np.repeat(params, E, axis=0), arch, seeds * n)
    return PopulationRollouts(params, batch.states.reshape(n, E, T, -1),
                              batch.actions.reshape(n, E, T, -1), batch.returns.reshape(n, E),
                              env.gt_descriptors(batch).reshape(n, E, -1))


def population_embeddings(rff: RffMap, rollouts: PopulationRollouts, gamma: float) -> np.ndarray:
    n, E, T, _ = rollouts.states.shape
    if n == 0:
        return np.empty((0, rff.D))
    z = embed_batch(rff, rollouts.states.reshape(n * E, T, -1),
                    rollouts.actions.reshape(n * E, T, -1), gamma)
    return z.reshape(n, E, -1).mean(axis=1)


@dataclass
class PopulationReport:
    name: str
    size: int
    vendi: float | None
    qvs: float | None
    gt_qd: float
    gt_coverage: float
    mean_fitness: float | None
    max_fitness: float | None
    gamma_k: float | None

    def row(self) -> dict:
        return {"population": self.name, "size": self.size, "vendi": self.vendi,
                "qvs": self.qvs, "gt_qd": self.gt_qd, "gt_coverage": self.gt_coverage,
                "mean_fitness": self.mean_fitness, "max_fitness": self.max_fitness,
                "gamma_k": self.gamma_k}


def compare_populations(populations: Mapping[str, np.ndarray], env: PointMass2D,
                        arch: PolicyArchitecture, gt_config: ArchiveConfig, *,
                        eval_dim: int = 1000, eval_seed: int = 12345, episodes: int = 5,
                        return_floor: float = 0.0) -> dict[str, PopulationReport]:
    """Evaluate named parameter populations side by side.

    All populations share one evaluation feature map whose state normalizer
    is fitted on the pooled states of every population. The qVS divisor is the
    highest mean return over all compared populations and the offset is
    ``-return_floor``.
    """
    rollouts = {name: rollout_population(env, arch, p, episodes, eval_seed)
                for name, p in populations.items()}
    rff = make_eval_rff(eval_seed, eval_dim, env)
    for r in rollouts.values():
        if len(r.params):
            rff.normalizer.update(r.states.reshape(-1, r.states.shape[-1]))
    fits = [r.fitness for r in rollouts.values() if len(r.params)]
    divisor = max(float(np.max(f)) for f in fits) + (-return_floor) if fits else 1.0
    reports = {}
    for name, r in rollouts.items():
        n = len(r.params)
        pop = [Occupant(r.params[i], float(r.fitness[i]), r.gt_mean[i], np.zeros(0))
               for i in range(n)]
        gt = gt_archive(pop, lambda o: o.descriptor, gt_config)
        vs = q = gamma_k = None
        if n >= 2:
            psi = population_embeddings(rff, r, env.spec.gamma)
            km = build_kernel(psi, seeding.make_rng(eval_seed, seeding.KERNEL))
            vs = vendi(km)
            q = qvs(r.fitness, km, -return_floor, divisor) if divisor > 0 else 0.0
            gamma_k = km.gamma_k
        reports[name] = PopulationReport(
            name, n, vs, q, gt.qd_score(), gt.coverage(),
            float(r.fitness.mean()) if n else None, float(r.fitness.max()) if n else None,
            gamma_k)
    return reports


# --------------------------------------------------------------------------
# descriptor stability


def min_max_scale(X: np.ndarray, low=None, high=None) -> np.ndarray:
    """Per-axis scaling of ``X`` so ``low -> 0`` and ``high -> 1``.

    Bounds default to the sample min and max; constant axes map to 0.
    """
    X = np.asarray(X, dtype=float)
    low = X.min(axis=0) if low is None else np.asarray(low, dtype=float)
    high = X.max(axis=0) if high is None else np.asarray(high, dtype=float)
    span = high - low
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (X - low) / safe, 0.0)


def descriptor_variance(env: PointMass2D, arch: PolicyArchitecture, params,
                        rff: RffMap, desc_fn: Callable[[np.ndarray], np.ndarray],
                        n_rollouts: int = 32, rollouts_per_estimate: int = 1,
                        seed: int = 0) -> np.ndarray:
    """Per-axis variance of ``n_rollouts`` descriptor estimates of one policy.

    Each estimate averages the descriptors of ``rollouts_per_estimate``
    independently embedded episodes. Descriptors are min-max scaled to [0, 1]
    per axis using the range of the individual single-episode descriptors, so
    estimates built from different numbers of episodes share one scale.
    """
    if n_rollouts < 2:
        raise ConfigurationError("n_rollouts must be at least 2")
    r = int(rollouts_per_estimate)
    if r < 1:
        raise ConfigurationError("rollouts_per_estimate must be positive")
    params = np.asarray(params, dtype=float).reshape(1, -1)
    total = n_rollouts * r
    seeds = [seeding.derive_seed(seed, seeding.EVAL, r, i) for i in range(total)]
    batch = env.rollout_batch(np.repeat(params, total, axis=0), arch, seeds)
    z = embed_batch(rff, batch.states, batch.actions, env.spec.gamma)
    single = np.atleast_2d(desc_fn(z))
    low, high = single.min(axis=0), single.max(axis=0)
    estimates = single.reshape(n_rollouts, r, -1).mean(axis=1)
    return min_max_scale(estimates, low, high).var(axis=0)


# --------------------------------------------------------------------------
# adaptation


KNOBS = ("friction", "mass")


@dataclass
class AdaptationReport:
    knob: str
    grid: np.ndarray             # (G,)
    returns: np.ndarray          # (n, G) per-policy mean returns
    R: float
    thresholds: tuple[float, ...]
    best: np.ndarray = field(init=False)
    auc: float = field(init=False)
    success: dict = field(init=False)  # p -> (G,) counts

    def __post_init__(self):
        self.best = self.returns.max(axis=0)
        self.auc = auc(self.grid, self.best)
        self.success = {p: success_counts(self.returns, self.R, p) for p in self.thresholds}


def auc(grid, curve) -> float:
    """Trapezoidal area under ``curve`` over ``grid``; a single point gives 0."""
    x = np.asarray(grid, dtype=float)
    y = np.asarray(curve, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigurationError("grid and curve must be 1-D arrays of equal length")
    if x.size < 2:
        return 0.0
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def success_counts(returns, R: float, p: float) -> np.ndarray:
    """Policies with mean return at least ``R * p``, per grid column."""
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    return np.sum(r >= R * p, axis=0)


def adaptation_sweep(population, env_base: PointMassConfig, arch: PolicyArchitecture,
                     knob: str, grid, episodes: int = 5,
                     thresholds: Sequence[float] = (0.9, 0.7), R: float | None = None,
                     seed: int = 0) -> AdaptationReport:
    """Mean return of every policy as one environment knob is scaled along ``grid``.

    ``R`` defaults to the best mean return in the unaltered environment.
    """
    params = np.atleast_2d(np.asarray(population, dtype=float))
    if params.shape[0] == 0 or params.size == 0:
        raise DomainError("empty population")
    if knob not in KNOBS:
        raise ConfigurationError(f"knob must be one of {KNOBS}, got {knob!r}")
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0):
        raise ConfigurationError("grid must be nonempty and strictly increasing")
    if R is None:
        R = float(rollout_population(PointMass2D(env_base), arch, params, episodes,
                                     seed).fitness.max())
    cols = []
    for j, v in enumerate(g):
        scales = {"friction_scale": v} if knob == "friction" else {"mass_scale": v}
        env = PointMass2D(vary_env(env_base, **scales))
        cols.append(rollout_population(env, arch, params, episodes, seed, stream=j + 1).fitness)
    return AdaptationReport(knob, g, np.stack(cols, axis=1), float(R),
                            tuple(float(p) for p in thresholds))
