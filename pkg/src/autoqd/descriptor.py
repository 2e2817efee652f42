"""Calibrated weighted PCA: affine maps from policy embeddings to descriptors.

Embeddings are weighted by normalized fitness, principal directions are taken
from the weighted centered data, and each output axis is rescaled so the 5th
and 95th percentiles of the fitted projections land on -1 and +1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

LOW_Q = 0.05
HIGH_Q = 0.95
QUANTILE_METHOD = "inverted_cdf"


def normalize_scores(fitness) -> np.ndarray:
    """Fitness-proportional weights with a floor of ``1/m`` before normalizing."""
    f = np.asarray(fitness, dtype=float)
    m = f.size
    if m == 0:
        raise DomainError("need at least one fitness value")
    spread = f.max() - f.min()
    if spread == 0:
        return np.full(m, 1.0 / m)
    ft = np.maximum((f - f.min()) / spread, 1.0 / m)
    return ft / ft.sum()


@dataclass
class CwPcaFit:
    components: np.ndarray  # (D, k), orthonormal columns
    mean: np.ndarray        # (D,)
    scale: np.ndarray       # (k,)
    offset: np.ndarray      # (k,)
    q_low: np.ndarray
    q_high: np.ndarray
    rank: int

    @property
    def A(self) -> np.ndarray:
        return self.scale[:, None] * self.components.T

    @property
    def b(self) -> np.ndarray:
        return self.offset - self.A @ self.mean

    @property
    def k(self) -> int:
        return self.components.shape[1]

    def raw(self, psi: np.ndarray) -> np.ndarray:
        """Uncalibrated projections ``P^T (psi - mean)``."""
        return (np.asarray(psi, dtype=float) - self.mean) @ self.components


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def fit_cwpca(embeddings, fitness, k: int, weighted: bool = True) -> CwPcaFit:
    """Fit the calibrated weighted PCA map on ``m`` embeddings of dimension ``D``.

    ``weighted=False`` uses uniform weights (plain PCA plus calibration).
    When the weighted data has fewer than ``k`` nonzero singular values the
    remaining directions are an orthonormal completion with unit scale and
    zero offset.
    """
    X = np.asarray(embeddings, dtype=float)
    if X.ndim != 2:
        raise ConfigurationError("embeddings must be a 2-D array")
    m, D = X.shape
    if m < 2:
        raise DomainError(f"need at least two embeddings, got {m}")
    if not 1 <= k <= D:
        raise ConfigurationError(f"k must lie in [1, {D}], got {k}")
    f = np.asarray(fitness, dtype=float)
    if f.shape != (m,):
        raise ConfigurationError("need one fitness value per embedding")

    w = normalize_scores(f) if weighted else np.full(m, 1.0 / m)
    mu = w @ X
    centered = X - mu
    Xw = np.sqrt(w)[:, None] * centered
    _, s, Vt = np.linalg.svd(Xw, full_matrices=True)
    tol = max(m, D) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0
    V = _fix_signs(Vt[:k].T.copy())

    proj = centered @ V
    q_low = np.quantile(proj, LOW_Q, axis=0, method=QUANTILE_METHOD)
    q_high = np.quantile(proj, HIGH_Q, axis=0, method=QUANTILE_METHOD)
    scale = np.empty(k)
    offset = np.empty(k)
    for i in range(k):
        if i >= rank:
            scale[i], offset[i] = 1.0, 0.0
        elif q_high[i] - q_low[i] < 1e-8:
            scale[i], offset[i] = 1.0, -(q_low[i] + q_high[i]) / 2.0
        else:
            scale[i] = 2.0 / (q_high[i] - q_low[i])
            offset[i] = -1.0 - scale[i] * q_low[i]
    return CwPcaFit(V, mu, scale, offset, q_low, q_high, min(rank, k))


def project(fit: "CwPcaFit | AffineMap", psi) -> np.ndarray:
    """Descriptor ``A psi + b``.

    Reduces explicitly over the embedding axis instead of calling BLAS, so the
    bits do not depend on memory layout or on the batch a row sits in.
    """
    psi = np.asarray(psi, dtype=float)
    A = np.ascontiguousarray(fit.A)
    if psi.shape[-1] != A.shape[1]:
        raise ConfigurationError(f"embedding length {psi.shape[-1]} != {A.shape[1]}")
    return np.ascontiguousarray(psi[..., None, :] * A).sum(axis=-1) + fit.b


@dataclass
class AffineMap:
    """A descriptor map ``desc = A psi + b`` with bookkeeping for persistence."""

    A: np.ndarray
    b: np.ndarray
    version: int = 0
    step: int = 0
    fit: CwPcaFit | None = None

    @classmethod
    def from_fit(cls, fit: CwPcaFit, version: int, step: int) -> "AffineMap":
        return cls(fit.A, fit.b, version, step, fit)

    @classmethod
    def random_projection(cls, k: int, D: int, rng: np.random.Generator) -> "AffineMap":
        """Row-orthonormal ``k x D`` projection with zero offset."""
        if k > D:
            raise ConfigurationError("k cannot exceed D")
        Q, R = np.linalg.qr(rng.standard_normal((D, k)))
        Q = Q * np.sign(np.diag(R))
        return cls(Q.T.copy(), np.zeros(k), 0, 0, None)

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def __call__(self, psi) -> np.ndarray:
        return project(self, psi)

    def to_dict(self) -> dict:
        out = {"version": self.version, "step": self.step,
               "A": self.A.tolist(), "b": self.b.tolist()}
        if self.fit is not None:
            out["fit"] = {"components": self.fit.components.tolist(),
                          "mean": self.fit.mean.tolist(),
                          "scale": self.fit.scale.tolist(),
                          "offset": self.fit.offset.tolist(),
                          "q_low": self.fit.q_low.tolist(),
                          "q_high": self.fit.q_high.tolist(),
                          "rank": self.fit.rank}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AffineMap":
        fit = None
        if d.get("fit") is not None:
            f = d["fit"]
            fit = CwPcaFit(np.array(f["components"]), np.array(f["mean"]),
                           np.array(f["scale"]), np.array(f["offset"]),
                           np.array(f["q_low"]), np.array(f["q_high"]), f["rank"])
        return cls(np.array(d["A"]), np.array(d["b"]), d["version"], d["step"], fit)
