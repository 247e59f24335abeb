"""Classical Ising models, exact enumeration and moment statistics.

Spins take values in {-1, +1}. The energy convention used throughout the
package is

    E(s) = -sum_i h_i s_i - sum_{i<j} J_ij s_i s_j

and the Gibbs distribution at inverse temperature beta is
P(s) = exp(-beta E(s)) / Z.

Configuration vectors of length 2**n are indexed so that bit i of the index
is spin i, with bit value 1 meaning spin +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np
from scipy.special import logsumexp

#: Hard cap on the number of spins handled by exact enumeration.
MAX_ENUMERATION_SPINS = 24

_CHUNK_BITS = 18


class ModelSizeError(ValueError):
    """Raised when a model is too large for exact enumeration."""


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _canonical_edges(edges, values, n):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    values = np.asarray(values, dtype=float).reshape(-1)
    if len(edges) != len(values):
        raise ValueError("edge list and coupling values differ in length")
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise ValueError("edge references a node outside the model")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise ValueError("self-edges are not allowed")
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    order = np.lexsort((hi, lo))
    edges = np.stack([lo[order], hi[order]], axis=1) if len(edges) else edges
    values = values[order]
    if len(edges) > 1:
        dup = np.all(edges[1:] == edges[:-1], axis=1)
        if np.any(dup):
            i, j = edges[1:][dup][0]
            raise ValueError(f"duplicate edge ({i}, {j})")
    return edges, values


@dataclass(frozen=True)
class IsingModel:
    """Fields ``h`` and couplings ``J`` over an explicit edge list.

    ``edges`` is stored canonically: ``i < j`` and sorted lexicographically,
    with ``J[k]`` the coupling on ``edges[k]``. Absent edges have zero
    coupling.
    """

    h: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    J: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).reshape(-1)
        edges, J = _canonical_edges(self.edges, self.J, len(h))
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(J))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "h", _frozen(h))
        object.__setattr__(self, "edges", _frozen(edges, np.int64))
        object.__setattr__(self, "J", _frozen(J))

    @classmethod
    def from_couplings(cls, h, couplings: Mapping[tuple[int, int], float] | None = None):
        couplings = dict(couplings or {})
        edges = list(couplings.keys())
        return cls(h, np.array(edges, dtype=np.int64).reshape(-1, 2), list(couplings.values()))

    @classmethod
    def zeros(cls, n: int, edges=()):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        return cls(np.zeros(n), edges, np.zeros(len(edges)))

    @property
    def n(self) -> int:
        return len(self.h)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def coupling_matrix(self) -> np.ndarray:
        """Dense symmetric n x n coupling matrix with zero diagonal."""
        mat = np.zeros((self.n, self.n))
        if self.num_edges:
            i, j = self.edges.T
            mat[i, j] = self.J
            mat[j, i] = self.J
        return mat

    def couplings(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(v) for (i, j), v in zip(self.edges, self.J)}

    def scaled(self, factor: float) -> "IsingModel":
        return IsingModel(self.h * factor, self.edges, self.J * factor)

    def with_params(self, h=None, J=None) -> "IsingModel":
        return IsingModel(self.h if h is None else h, self.edges, self.J if J is None else J)

    def params(self) -> np.ndarray:
        """Flat parameter vector ``[h, J]``."""
        return np.concatenate([self.h, self.J])

    def __eq__(self, other):
        if not isinstance(other, IsingModel):
            return NotImplemented
        return (
            np.array_equal(self.h, other.h)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.J, other.J)
        )

    __hash__ = None


def complete_edges(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.stack([i, j], axis=1).astype(np.int64)


def random_model(n: int, rng, scale_h=1.0, scale_J=1.0, edges=None) -> IsingModel:
    """Gaussian random model, complete graph unless ``edges`` is given."""
    rng = np.random.default_rng(rng)
    edges = complete_edges(n) if edges is None else np.asarray(edges).reshape(-1, 2)
    return IsingModel(scale_h * rng.standard_normal(n), edges, scale_J * rng.standard_normal(len(edges)))


def check_spins(s, n: int | None = None) -> np.ndarray:
    s = np.asarray(s)
    if n is not None and s.shape[-1] != n:
        raise ValueError(f"spin configuration has length {s.shape[-1]}, model has {n} nodes")
    if not np.all((s == 1) | (s == -1)):
        raise ValueError("spin entries must be exactly -1 or +1")
    return s


def energy(model: IsingModel, s) -> float | np.ndarray:
    """Energy of one configuration (shape ``(n,)``) or a batch (``(k, n)``)."""
    s = check_spins(s, model.n).astype(float)
    e = _energies(model, s)
    return float(e) if np.ndim(e) == 0 else e


def _energies(model: IsingModel, s: np.ndarray) -> np.ndarray:
    e = -(s @ model.h)
    if model.num_edges > model.n:
        e = e - 0.5 * np.einsum("...i,...i->...", s @ model.coupling_matrix(), s)
    elif model.num_edges:
        i, j = model.edges.T
        e = e - (s[..., i] * s[..., j]) @ model.J
    return e


def index_to_spins(index, n: int) -> np.ndarray:
    """Configurations for the given indices; bit i set means spin i is +1."""
    index = np.asarray(index, dtype=np.int64)
    bits = (index[..., None] >> np.arange(n, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(np.int8)


def spins_to_index(s) -> np.ndarray:
    s = np.asarray(s)
    n = s.shape[-1]
    return ((s > 0).astype(np.int64) << np.arange(n, dtype=np.int64)).sum(axis=-1)


def all_configs(n: int) -> np.ndarray:
    return index_to_spins(np.arange(2**n), n)


def _config_chunks(n: int) -> Iterator[tuple[int, np.ndarray]]:
    size = 1 << min(n, _CHUNK_BITS)
    for start in range(0, 2**n, size):
        yield start, index_to_spins(np.arange(start, start + size), n)


def _check_cap(n: int, cap: int | None):
    cap = MAX_ENUMERATION_SPINS if cap is None else cap
    if n > cap:
        raise ModelSizeError(f"{n} spins exceeds the exact-enumeration cap of {cap}")


def all_energies(model: IsingModel, cap: int | None = None) -> np.ndarray:
    """Energies of all 2**n configurations in index order."""
    _check_cap(model.n, cap)
    out = np.empty(2**model.n)
    for start, s in _config_chunks(model.n):
        out[start : start + len(s)] = _energies(model, s.astype(float))
    return out


@dataclass(frozen=True)
class ExactDistribution:
    """Gibbs distribution over all 2**n configurations."""

    n: int
    beta: float
    log_Z: float
    probabilities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probabilities", _frozen(self.probabilities))

    def log_prob(self, s) -> np.ndarray:
        return np.log(self.probabilities[spins_to_index(s)])


def enumerate_distribution(model: IsingModel, beta: float = 1.0, cap: int | None = None) -> ExactDistribution:
    """Exact Gibbs distribution by enumeration of all configurations."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    logw = -beta * all_energies(model, cap)
    log_Z = float(logsumexp(logw))
    p = np.exp(logw - log_Z)
    p /= p.sum()
    return ExactDistribution(model.n, float(beta), log_Z, p)


@dataclass(frozen=True)
class MomentVector:
    """Per-node means and per-edge correlations."""

    means: np.ndarray
    correlations: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "correlations", _frozen(self.correlations))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.means, self.correlations])

    def max_abs_diff(self, other: "MomentVector") -> float:
        return float(np.max(np.abs(self.flat() - other.flat()), initial=0.0))


def exact_moments(dist: ExactDistribution, model: IsingModel) -> MomentVector:
    if dist.n != model.n:
        raise ValueError("distribution and model have different node counts")
    means = np.zeros(model.n)
    second = np.zeros((model.n, model.n))
    for start, s in _config_chunks(model.n):
        p = dist.probabilities[start : start + len(s)]
        sf = s.astype(float)
        means += p @ sf
        second += (sf * p[:, None]).T @ sf
    corr = second[model.edges[:, 0], model.edges[:, 1]] if model.num_edges else np.zeros(0)
    return MomentVector(np.clip(means, -1, 1), np.clip(corr, -1, 1))


def condition(model: IsingModel, clamps: Mapping[int, int]) -> tuple[IsingModel, np.ndarray]:
    """Model over the free nodes given clamped spins.

    Returns the reduced model and the array of free node indices (in
    increasing order). Clamped neighbours contribute to the free fields.
    """
    clamped = np.zeros(model.n, dtype=bool)
    values = np.zeros(model.n)
    for node, v in clamps.items():
        if not 0 <= node < model.n:
            raise ValueError(f"clamp target {node} is not a node of the model")
        if v not in (-1, 1):
            raise ValueError("clamp values must be -1 or +1")
        clamped[node] = True
        values[node] = v
    free = np.flatnonzero(~clamped)
    remap = -np.ones(model.n, dtype=np.int64)
    remap[free] = np.arange(len(free))
    h = model.h.copy()
    keep_e, keep_J = [], []
    for (i, j), Jij in zip(model.edges, model.J):
        if clamped[i] and clamped[j]:
            continue
        if clamped[i]:
            h[j] += Jij * values[i]
        elif clamped[j]:
            h[i] += Jij * values[j]
        else:
            keep_e.append((remap[i], remap[j]))
            keep_J.append(Jij)
    reduced = IsingModel(h[free], np.array(keep_e, dtype=np.int64).reshape(-1, 2), keep_J)
    return reduced, free


# --- {0,1}-unit parametrization -------------------------------------------


@dataclass(frozen=True)
class BinaryModel:
    """Pairwise model over units u in {0,1}: E(u) = -a.u - sum_{i<j} W_ij u_i u_j."""

    a: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    W: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        edges, W = _canonical_edges(self.edges, self.W, len(a))
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(W))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "edges", _frozen(edges, np.int64))
        object.__setattr__(self, "W", _frozen(W))

    @property
    def n(self) -> int:
        return len(self.a)

    def energy(self, u) -> float | np.ndarray:
        u = np.asarray(u, dtype=float)
        e = -(u @ self.a)
        if len(self.edges):
            i, j = self.edges.T
            e = e - (u[..., i] * u[..., j]) @ self.W
        return float(e) if np.ndim(e) == 0 else e


def binary_to_spin(model: BinaryModel) -> tuple[IsingModel, float]:
    """Spin model and offset with E_binary(u) = E_spin(2u - 1) + offset."""
    h = model.a / 2.0
    if len(model.edges):
        i, j = model.edges.T
        np.add.at(h, i, model.W / 4.0)
        np.add.at(h, j, model.W / 4.0)
    offset = -model.a.sum() / 2.0 - model.W.sum() / 4.0
    return IsingModel(h, model.edges, model.W / 4.0), float(offset)


def spin_to_binary(model: IsingModel) -> tuple[BinaryModel, float]:
    """Inverse of :func:`binary_to_spin`; same offset convention."""
    W = 4.0 * model.J
    a = 2.0 * model.h
    if model.num_edges:
        i, j = model.edges.T
        np.add.at(a, i, -W / 2.0)
        np.add.at(a, j, -W / 2.0)
    offset = -a.sum() / 2.0 - W.sum() / 4.0
    return BinaryModel(a, model.edges, W), float(offset)


def spins_to_bits(s) -> np.ndarray:
    return ((np.asarray(s) + 1) // 2).astype(np.int8)


def bits_to_spins(u) -> np.ndarray:
    return (2 * np.asarray(u) - 1).astype(np.int8)
