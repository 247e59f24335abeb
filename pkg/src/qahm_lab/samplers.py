"""Sampler backends behind a common request/response contract.

A backend receives control parameters (an :class:`~qahm_lab.ising.IsingModel`)
and returns weighted spin configurations. Three backends are provided:

* :func:`sample_exact` draws i.i.d. samples from the enumerated distribution.
* :func:`sample_gibbs` runs heat-bath Markov chains.
* :func:`sample_device` emulates a noisy annealer: parameter noise, dynamic
  range clipping and a hidden inverse temperature over a fixed topology.
  Only the samples are returned; nothing about the realized parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numba
import numpy as np

from .hardware import Topology
from .ising import (
    ExactDistribution,
    IsingModel,
    MomentVector,
    check_spins,
    condition,
    enumerate_distribution,
    index_to_spins,
    spins_to_index,
)

DEFAULT_BURN_IN = 1000
DEFAULT_THIN = 10
DEFAULT_CHAINS = 100

# Stream tag separating device noise draws from chain streams.
_NOISE_STREAM = 0x6E6F697365


@dataclass(frozen=True)
class SampleRequest:
    model: IsingModel
    beta: float = 1.0
    num_reads: int = 1000
    clamps: Mapping[int, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if int(self.num_reads) < 1:
            raise ValueError("num_reads must be at least 1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        clamps = {int(k): int(v) for k, v in dict(self.clamps).items()}
        for node, v in clamps.items():
            if not 0 <= node < self.model.n:
                raise ValueError(f"clamp target {node} is not a node of the model")
            if v not in (-1, 1):
                raise ValueError("clamp values must be -1 or +1")
        object.__setattr__(self, "clamps", clamps)
        object.__setattr__(self, "num_reads", int(self.num_reads))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class SampleSet:
    """Distinct configurations with their multiplicities."""

    configs: np.ndarray
    counts: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples, metadata=None) -> "SampleSet":
        samples = np.asarray(samples, dtype=np.int8)
        configs, counts = np.unique(samples, axis=0, return_counts=True)
        return cls(configs, counts.astype(np.int64), dict(metadata or {}))

    @property
    def num_reads(self) -> int:
        return int(self.counts.sum())

    @property
    def n(self) -> int:
        return self.configs.shape[1]

    def to_array(self) -> np.ndarray:
        """All reads, each config repeated by its count."""
        return np.repeat(self.configs, self.counts, axis=0)

    def frequencies(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def to_text(self) -> str:
        """One ``count +1-1...`` line per distinct configuration."""
        lines = []
        for c, s in zip(self.counts, self.configs):
            lines.append(f"{int(c)} " + "".join("+1" if v > 0 else "-1" for v in s))
        return "\n".join(lines) + "\n"


class Sampler(Protocol):
    name: str

    def sample(self, request: SampleRequest) -> SampleSet: ...


# --- exact backend ---------------------------------------------------------


def _assemble(free_samples, free, clamps, n):
    out = np.empty((len(free_samples), n), dtype=np.int8)
    out[:, free] = free_samples
    for node, v in clamps.items():
        out[:, node] = v
    return out


def sample_exact(req: SampleRequest, hidden_beta: float | None = None) -> SampleSet:
    """I.i.d. draws from the exact (clamp-conditioned) Gibbs distribution.

    With ``hidden_beta`` the requested beta is ignored and nothing about the
    temperature is disclosed, mimicking an uncalibrated device.
    """
    beta = req.beta if hidden_beta is None else hidden_beta
    reduced, free = condition(req.model, req.clamps)
    rng = np.random.default_rng(req.seed)
    if len(free) == 0:
        samples = _assemble(np.zeros((1, 0), np.int8), free, req.clamps, req.model.n)
        counts = np.array([req.num_reads])
    else:
        dist = enumerate_distribution(reduced, beta)
        counts_all = rng.multinomial(req.num_reads, dist.probabilities)
        idx = np.flatnonzero(counts_all)
        samples = _assemble(index_to_spins(idx, len(free)), free, req.clamps, req.model.n)
        counts = counts_all[idx]
    order = np.lexsort(samples.T[::-1])
    effective = {} if hidden_beta is not None else {"beta": float(beta)}
    return SampleSet(samples[order], counts[order].astype(np.int64), {"backend": "exact", "effective_parameters": effective})


# --- Gibbs backend ---------------------------------------------------------


def conditional_up_probability(model: IsingModel, s, site: int, beta: float) -> float | np.ndarray:
    """Heat-bath probability that ``site`` is +1 given the other spins."""
    s = np.asarray(s, dtype=float)
    local = model.h[site] + s @ model.coupling_matrix()[site]
    return 1.0 / (1.0 + np.exp(-2.0 * beta * local))


def heat_bath_kernel(model: IsingModel, beta: float, site: int) -> np.ndarray:
    """Transition matrix of a single heat-bath update at ``site``.

    Entry ``[a, b]`` is the probability of moving from configuration index
    ``a`` to ``b``.
    """
    n = model.n
    configs = index_to_spins(np.arange(2**n), n)
    p_up = conditional_up_probability(model, configs, site, beta)
    T = np.zeros((2**n, 2**n))
    up = configs.copy()
    up[:, site] = 1
    down = configs.copy()
    down[:, site] = -1
    rows = np.arange(2**n)
    np.add.at(T, (rows, spins_to_index(up)), p_up)
    np.add.at(T, (rows, spins_to_index(down)), 1.0 - p_up)
    return T


def _csr(model: IsingModel):
    n = model.n
    if model.num_edges:
        i, j = model.edges.T
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        vals = np.concatenate([model.J, model.J])
    else:
        rows = cols = np.zeros(0, np.int64)
        vals = np.zeros(0)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64), vals.astype(float)


@numba.njit(cache=True)
def _sweep_block(state, h, indptr, indices, weights, beta, free, uniforms, t0, burn_in, thin, out, reads):
    n_chains = state.shape[0]
    n_sweeps = uniforms.shape[1]
    for c in range(n_chains):
        for t in range(n_sweeps):
            for k in range(free.shape[0]):
                i = free[k]
                local = h[i]
                for p in range(indptr[i], indptr[i + 1]):
                    local += weights[p] * state[c, indices[p]]
                p_up = 1.0 / (1.0 + np.exp(-2.0 * beta * local))
                state[c, i] = 1 if uniforms[c, t, k] < p_up else -1
            done = t0 + t + 1 - burn_in
            if done > 0 and done % thin == 0:
                r = done // thin - 1
                if r < reads[c]:
                    out[c, r, :] = state[c, :]


def _chain_rngs(seed: int, chains: int):
    return [np.random.default_rng([seed, c]) for c in range(chains)]


def run_gibbs(model: IsingModel, beta: float, num_reads: int, clamps: Mapping[int, int], seed: int,
              chains: int = DEFAULT_CHAINS, burn_in: int = DEFAULT_BURN_IN, thin: int = DEFAULT_THIN,
              block: int = 256) -> np.ndarray:
    """Raw heat-bath reads, merged in chain-index order.

    Each chain draws from its own stream seeded by ``(seed, chain)`` so the
    output does not depend on how chains are scheduled.
    """
    if chains < 1 or burn_in < 0 or thin < 1:
        raise ValueError("chains and thin must be positive, burn_in non-negative")
    chains = min(chains, num_reads)
    n = model.n
    reads = np.full(chains, num_reads // chains, dtype=np.int64)
    reads[: num_reads % chains] += 1
    free = np.array([i for i in range(n) if i not in clamps], dtype=np.int64)
    rngs = _chain_rngs(seed, chains)
    state = np.empty((chains, n), dtype=np.int8)
    for c, rng in enumerate(rngs):
        state[c] = np.where(rng.random(n) < 0.5, -1, 1)
    for node, v in clamps.items():
        state[:, node] = v
    indptr, indices, weights = _csr(model)
    out = np.empty((chains, int(reads.max()), n), dtype=np.int8)
    total = burn_in + thin * int(reads.max())
    for t0 in range(0, total, block):
        b = min(block, total - t0)
        uniforms = np.stack([rng.random((b, len(free))) for rng in rngs])
        _sweep_block(state, model.h, indptr, indices, weights, float(beta), free, uniforms,
                     t0, burn_in, thin, out, reads)
    return np.concatenate([out[c, : reads[c]] for c in range(chains)])


def sample_gibbs(req: SampleRequest, chains: int = DEFAULT_CHAINS, burn_in: int = DEFAULT_BURN_IN,
                 thin: int = DEFAULT_THIN, hidden_beta: float | None = None) -> SampleSet:
    """Heat-bath MCMC with sweeps in fixed node order; clamped nodes are never updated."""
    beta = req.beta if hidden_beta is None else hidden_beta
    samples = run_gibbs(req.model, beta, req.num_reads, req.clamps, req.seed, chains, burn_in, thin)
    effective = {} if hidden_beta is not None else {"beta": float(beta)}
    return SampleSet.from_samples(samples, {"backend": "gibbs", "effective_parameters": effective})


# --- noisy device emulator -------------------------------------------------


class TopologyError(ValueError):
    """The requested model uses a coupling the device does not provide."""


@dataclass(frozen=True)
class DeviceProfile:
    """Hidden characteristics of an emulated annealer.

    With ``refresh_noise_each_call`` the parameter noise is redrawn for every
    request (seeded by the request); otherwise a single realization drawn
    from ``noise_seed`` is frozen for the lifetime of the profile.
    """

    topology: Topology
    beta_eff: float = 1.0
    sigma_h: float = 0.0
    sigma_J: float = 0.0
    range_h: float = 2.0
    range_J: float = 1.0
    refresh_noise_each_call: bool = True
    noise_seed: int = 0
    chains: int = DEFAULT_CHAINS
    burn_in: int = DEFAULT_BURN_IN
    thin: int = DEFAULT_THIN

    def __post_init__(self):
        if not self.beta_eff > 0:
            raise ValueError("beta_eff must be positive")
        if not (self.range_h > 0 and self.range_J > 0):
            raise ValueError("dynamic ranges must be positive")
        if self.sigma_h < 0 or self.sigma_J < 0:
            raise ValueError("noise scales must be non-negative")
        rng = np.random.default_rng([self.noise_seed, _NOISE_STREAM])
        object.__setattr__(self, "_frozen_noise", (
            rng.standard_normal(self.topology.n),
            rng.standard_normal(self.topology.num_edges),
        ))


def _edge_positions(model: IsingModel, topology: Topology) -> np.ndarray:
    lookup = topology.edge_index()
    pos = np.empty(model.num_edges, dtype=np.int64)
    for k, (i, j) in enumerate(model.edges):
        key = (int(i), int(j))
        if key not in lookup:
            raise TopologyError(f"coupling {key} is not available on the device topology")
        pos[k] = lookup[key]
    return pos


def realized_model(req: SampleRequest, profile: DeviceProfile) -> IsingModel:
    """Parameters the emulated device actually implements for ``req``."""
    if req.model.n > profile.topology.n:
        raise TopologyError("model has more nodes than the device topology")
    pos = _edge_positions(req.model, profile.topology)
    if profile.refresh_noise_each_call:
        rng = np.random.default_rng([req.seed, _NOISE_STREAM])
        xi_h = rng.standard_normal(profile.topology.n)
        xi_J = rng.standard_normal(profile.topology.num_edges)
    else:
        xi_h, xi_J = profile._frozen_noise
    h = np.clip(req.model.h + profile.sigma_h * xi_h[: req.model.n], -profile.range_h, profile.range_h)
    J = np.clip(req.model.J + profile.sigma_J * xi_J[pos], -profile.range_J, profile.range_J)
    return req.model.with_params(h, J)


def sample_device(req: SampleRequest, profile: DeviceProfile) -> SampleSet:
    """Samples from the emulated device; the requested beta is ignored."""
    model = realized_model(req, profile)
    samples = run_gibbs(model, profile.beta_eff, req.num_reads, req.clamps, req.seed,
                        profile.chains, profile.burn_in, profile.thin)
    return SampleSet.from_samples(samples, {"backend": "device", "effective_parameters": {}})


# --- sampler objects -------------------------------------------------------


@dataclass
class ExactSampler:
    hidden_beta: float | None = None
    name: str = "exact"

    def sample(self, request: SampleRequest) -> SampleSet:
        return sample_exact(request, self.hidden_beta)


@dataclass
class GibbsSampler:
    chains: int = DEFAULT_CHAINS
    burn_in: int = DEFAULT_BURN_IN
    thin: int = DEFAULT_THIN
    hidden_beta: float | None = None
    name: str = "gibbs"

    def sample(self, request: SampleRequest) -> SampleSet:
        return sample_gibbs(request, self.chains, self.burn_in, self.thin, self.hidden_beta)


@dataclass
class DeviceSampler:
    profile: DeviceProfile
    name: str = "device"

    def sample(self, request: SampleRequest) -> SampleSet:
        return sample_device(request, self.profile)


# --- statistics ------------------------------------------------------------


def empirical_moments(sample_set: SampleSet, edges) -> MomentVector:
    """Count-weighted means and per-edge correlations."""
    if sample_set.num_reads == 0:
        raise ValueError("empty sample set")
    w = sample_set.frequencies()
    s = sample_set.configs.astype(float)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    means = w @ s
    corr = w @ (s[:, edges[:, 0]] * s[:, edges[:, 1]]) if len(edges) else np.zeros(0)
    return MomentVector(means, corr)


def moments_of(samples, edges, weights=None) -> MomentVector:
    """Moments of a raw ``(k, n)`` array of spins, optionally weighted."""
    s = np.asarray(samples, dtype=float)
    if len(s) == 0:
        raise ValueError("empty sample array")
    w = np.full(len(s), 1.0 / len(s)) if weights is None else np.asarray(weights) / np.sum(weights)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    corr = w @ (s[:, edges[:, 0]] * s[:, edges[:, 1]]) if len(edges) else np.zeros(0)
    return MomentVector(w @ s, corr)


def tv_distance(sample_set: SampleSet, dist: ExactDistribution) -> float:
    """Total-variation distance between empirical frequencies and ``dist``."""
    if sample_set.n != dist.n:
        raise ValueError("sample set and distribution have different node counts")
    check_spins(sample_set.configs)
    freq = np.zeros_like(dist.probabilities)
    np.add.at(freq, spins_to_index(sample_set.configs), sample_set.frequencies())
    return float(0.5 * np.abs(freq - dist.probabilities).sum())
