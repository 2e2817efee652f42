"""Rank-based CMA-ES with full covariance.

Constants follow Hansen's tutorial defaults ("The CMA Evolution Strategy: A
Tutorial", positive recombination weights only)::

    mu      = lambda // 2
    w_i     ~ ln((lambda + 1) / 2) - ln(i),  i = 1..mu, normalized to sum 1
    mu_eff  = 1 / sum(w_i^2)
    c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
    d_sigma = 1 + 2 max(0, sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
    c_c     = (4 + mu_eff / n) / (n + 4 + 2 mu_eff / n)
    c_1     = 2 / ((n + 1.3)^2 + mu_eff)
    c_mu    = min(1 - c_1, 2 (mu_eff - 2 + 1 / mu_eff) / ((n + 2)^2 + mu_eff))
    chi_n   = sqrt(n) (1 - 1 / (4n) + 1 / (21 n^2))

``tell`` only consumes the order of the candidates, never objective values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

EIG_FLOOR = 1e-14
MAX_CONDITION = 1e14
RESTART_EVERY = 100


def default_popsize(dim: int) -> int:
    return 4 + int(3 * math.log(dim))


@dataclass
class CmaEsState:
    mean: np.ndarray
    step_size: float
    cov: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    lam: int
    x0: np.ndarray
    sigma0: float
    generation: int = 0
    # strategy constants, derived from (dim, lam)
    mu: int = field(init=False)
    weights: np.ndarray = field(init=False)
    mueff: float = field(init=False)
    c_sigma: float = field(init=False)
    d_sigma: float = field(init=False)
    c_c: float = field(init=False)
    c_1: float = field(init=False)
    c_mu: float = field(init=False)
    chi_n: float = field(init=False)

    def __post_init__(self):
        n, lam = self.dim, self.lam
        self.mu = lam // 2
        w = math.log((lam + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / float(np.sum(self.weights ** 2))
        me = self.mueff
        self.c_sigma = (me + 2.0) / (n + me + 5.0)
        self.d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((me - 1.0) / (n + 1.0)) - 1.0) + self.c_sigma
        self.c_c = (4.0 + me / n) / (n + 4.0 + 2.0 * me / n)
        self.c_1 = 2.0 / ((n + 1.3) ** 2 + me)
        self.c_mu = min(1.0 - self.c_1, 2.0 * (me - 2.0 + 1.0 / me) / ((n + 2.0) ** 2 + me))
        self.chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def condition(self) -> float:
        return float(self.eigvals.max() / self.eigvals.min())

    def is_finite(self) -> bool:
        return (math.isfinite(self.step_size) and bool(np.all(np.isfinite(self.mean)))
                and bool(np.all(np.isfinite(self.cov))))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "step_size": self.step_size,
                "cov": self.cov.tolist(), "eigvecs": self.eigvecs.tolist(),
                "eigvals": self.eigvals.tolist(), "p_sigma": self.p_sigma.tolist(),
                "p_c": self.p_c.tolist(), "lam": self.lam, "x0": self.x0.tolist(),
                "sigma0": self.sigma0, "generation": self.generation}

    @classmethod
    def from_dict(cls, d: dict) -> "CmaEsState":
        return cls(np.array(d["mean"]), d["step_size"], np.array(d["cov"]),
                   np.array(d["eigvecs"]), np.array(d["eigvals"]), np.array(d["p_sigma"]),
                   np.array(d["p_c"]), d["lam"], np.array(d["x0"]), d["sigma0"],
                   d["generation"])


def cma_init(dim: int, x0, sigma0: float, lam: int | None = None) -> CmaEsState:
    """Fresh search distribution ``N(x0, sigma0^2 I)``."""
    if dim < 1:
        raise ConfigurationError("dim must be positive")
    lam = default_popsize(dim) if lam is None else int(lam)
    if lam < 2:
        raise ConfigurationError("lambda must be at least 2")
    if not sigma0 > 0:
        raise ConfigurationError("sigma0 must be positive")
    x0 = np.array(x0, dtype=float).reshape(-1)
    if x0.shape != (dim,):
        raise ConfigurationError(f"x0 has length {x0.size}, expected {dim}")
    return CmaEsState(x0.copy(), float(sigma0), np.eye(dim), np.eye(dim), np.ones(dim),
                      np.zeros(dim), np.zeros(dim), lam, x0.copy(), float(sigma0))


def cma_ask(state: CmaEsState, rng: np.random.Generator) -> np.ndarray:
    """``lam`` samples from ``N(mean, step_size^2 C)`` as a ``(lam, dim)`` array."""
    if not state.is_finite():
        raise FloatingPointError("non-finite CMA-ES state")
    z = rng.standard_normal((state.lam, state.dim))
    y = (z * np.sqrt(state.eigvals)) @ state.eigvecs.T
    return state.mean + state.step_size * y


def _check_ranking(ranking, lam: int) -> np.ndarray:
    r = np.asarray(ranking)
    if r.shape != (lam,) or not np.array_equal(np.sort(r), np.arange(lam)):
        raise DomainError("ranking must be a permutation of the candidate indices")
    return r.astype(int)


def cma_tell(state: CmaEsState, candidates: np.ndarray, ranking) -> CmaEsState:
    """Update the distribution in place from candidates ordered best-first by ``ranking``."""
    X = np.asarray(candidates, dtype=float)
    if X.shape != (state.lam, state.dim):
        raise ConfigurationError(f"expected candidates of shape {(state.lam, state.dim)}")
    order = _check_ranking(ranking, state.lam)
    n = state.dim
    sigma = state.step_size
    y = (X[order[:state.mu]] - state.mean) / sigma
    y_w = state.weights @ y
    state.mean = state.mean + sigma * y_w

    inv_sqrt = (state.eigvecs / np.sqrt(state.eigvals)) @ state.eigvecs.T
    cs = state.c_sigma
    state.p_sigma = ((1.0 - cs) * state.p_sigma
                     + math.sqrt(cs * (2.0 - cs) * state.mueff) * (inv_sqrt @ y_w))
    ps_norm = float(np.linalg.norm(state.p_sigma))
    g = state.generation + 1
    h_sigma = (ps_norm / math.sqrt(1.0 - (1.0 - cs) ** (2 * g))
               < (1.4 + 2.0 / (n + 1.0)) * state.chi_n)
    cc = state.c_c
    state.p_c = ((1.0 - cc) * state.p_c
                 + h_sigma * math.sqrt(cc * (2.0 - cc) * state.mueff) * y_w)

    c1, cmu = state.c_1, state.c_mu
    rank_mu = (y.T * state.weights) @ y
    decay = 1.0 - c1 - cmu + (1.0 - h_sigma) * c1 * cc * (2.0 - cc)
    C = decay * state.cov + c1 * np.outer(state.p_c, state.p_c) + cmu * rank_mu
    C = 0.5 * (C + C.T)
    vals, vecs = np.linalg.eigh(C)
    vals = np.maximum(vals, EIG_FLOOR)
    state.cov = (vecs * vals) @ vecs.T
    state.cov = 0.5 * (state.cov + state.cov.T)
    state.eigvals, state.eigvecs = vals, vecs

    state.step_size = sigma * math.exp((cs / state.d_sigma) * (ps_norm / state.chi_n - 1.0))
    state.generation = g
    return state


def needs_restart(state: CmaEsState, iteration: int | None = None,
                  every: int = RESTART_EVERY) -> bool:
    """True on the restart cadence, on ill conditioning or on non-finite values."""
    it = state.generation if iteration is None else iteration
    if not state.is_finite() or not np.all(np.isfinite(state.eigvals)):
        return True
    if it > 0 and it % every == 0:
        return True
    return state.condition > MAX_CONDITION


def rank_by_improvement(delta, fitness) -> np.ndarray:
    """Indices sorted by improvement (desc), then fitness (desc), then index."""
    delta = np.asarray(delta, dtype=float)
    fitness = np.asarray(fitness, dtype=float)
    idx = np.arange(delta.size)
    return np.lexsort((idx, -fitness, -delta))
