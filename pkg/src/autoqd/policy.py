"""Feedforward tanh policies over flat parameter vectors.

Layers can be dense or Toeplitz. A Toeplitz layer with ``m`` inputs and ``n``
outputs has a weight matrix ``W`` of shape ``(n, m)`` whose diagonals are
constant, ``W[i, j] == W[i + 1, j + 1]``, so it is stored as ``m + n - 1``
diagonal values followed by ``n`` biases. The diagonals are ordered from the
bottom-left one (``W[n-1, 0]``) to the top-right one (``W[0, m-1]``), i.e.
``W[i, j] = diag[j - i + n - 1]``. Dense layers store ``W`` row-major followed
by the biases. Layers are concatenated in forward order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class PolicyArchitecture:
    layer_sizes: tuple[int, ...]
    toeplitz: bool = True

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigurationError(f"invalid layer sizes {self.layer_sizes!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def for_env(cls, state_dim: int, action_dim: int, hidden: Sequence[int] = (16, 16),
                toeplitz: bool = True) -> "PolicyArchitecture":
        return cls((state_dim, *hidden, action_dim), toeplitz)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def layers(self):
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def layer_param_count(self, m: int, n: int) -> int:
        return (m + n - 1 + n) if self.toeplitz else (m * n + n)

    @property
    def param_count(self) -> int:
        return sum(self.layer_param_count(m, n) for m, n in self.layers())


def param_count(arch: PolicyArchitecture) -> int:
    return arch.param_count


def toeplitz_index(m: int, n: int) -> np.ndarray:
    """Index array mapping an ``(n, m)`` weight matrix onto its diagonal vector."""
    i = np.arange(n)[:, None]
    j = np.arange(m)[None, :]
    return j - i + n - 1


def unpack(params: np.ndarray, arch: PolicyArchitecture):
    """Split parameters of shape ``(..., P)`` into per-layer ``(W, b)`` pairs.

    ``W`` has shape ``(..., n, m)`` and ``b`` has shape ``(..., n)``.
    """
    params = np.asarray(params, dtype=float)
    if params.shape[-1] != arch.param_count:
        raise ConfigurationError(
            f"expected {arch.param_count} parameters, got {params.shape[-1]}")
    out = []
    pos = 0
    for m, n in arch.layers():
        if arch.toeplitz:
            diag = params[..., pos:pos + m + n - 1]
            pos += m + n - 1
            W = diag[..., toeplitz_index(m, n)]
        else:
            W = params[..., pos:pos + m * n].reshape(params.shape[:-1] + (n, m))
            pos += m * n
        b = params[..., pos:pos + n]
        pos += n
        out.append((W, b))
    return out


def forward(layers, states: np.ndarray) -> np.ndarray:
    """Batched forward pass with tanh on every layer.

    ``layers`` come from :func:`unpack` on a ``(B, P)`` batch and ``states`` is
    ``(B, input_dim)``. Products are reduced along a contiguous last axis so
    each row gives the same bits whatever batch it sits in.
    """
    h = states
    for W, b in layers:
        h = np.tanh(np.ascontiguousarray(W * h[:, None, :]).sum(axis=-1) + b)
    return h


def rescale(unit: np.ndarray, low, high) -> np.ndarray:
    """Map values in ``[-1, 1]`` affinely onto ``[low, high]``."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    out = low + (unit + 1.0) * 0.5 * (high - low)
    return np.clip(out, low, high)


def act(params, arch: PolicyArchitecture, state, action_low, action_high) -> np.ndarray:
    """Deterministic action for a single state."""
    state = np.asarray(state, dtype=float)
    if state.shape != (arch.input_dim,):
        raise ConfigurationError(
            f"state has shape {state.shape}, policy expects ({arch.input_dim},)")
    params = np.asarray(params, dtype=float)
    if params.shape != (arch.param_count,):
        raise ConfigurationError(
            f"expected {arch.param_count} parameters, got shape {params.shape}")
    layers = unpack(params[None, :], arch)
    return rescale(forward(layers, state[None, :])[0], action_low, action_high)


@dataclass
class Policy:
    """A parameter vector bound to its architecture."""

    arch: PolicyArchitecture
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (self.arch.param_count,):
            raise ConfigurationError(
                f"expected {self.arch.param_count} parameters, got shape {self.params.shape}")

    def __call__(self, state, action_low, action_high):
        return act(self.params, self.arch, state, action_low, action_high)
