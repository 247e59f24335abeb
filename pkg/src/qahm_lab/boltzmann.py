"""Boltzmann machine training with sampler-assisted negative phases.

Three families of trainers live here:

* restricted Boltzmann machines trained with CD-k or with negative-phase
  samples from a sampler backend whose temperature is estimated on the fly
  (and the warm-restart schedule that chains the two);
* the effective inverse-temperature estimator used by those trainers;
* fully visible Boltzmann machines trained gray-box by moment matching,
  optionally through a minor embedding, and clamped reconstruction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from . import textio
from .hardware import EmbeddingMap, Topology, decode_config, embed_model, encode_config, physical_edges
from .ising import (
    BinaryModel,
    IsingModel,
    ModelSizeError,
    MomentVector,
    binary_to_spin,
    check_spins,
    complete_edges,
    energy,
    enumerate_distribution,
    exact_moments,
    index_to_spins,
    spins_to_bits,
)
from .samplers import SampleRequest, Sampler, empirical_moments, moments_of

MAX_EXACT_HIDDEN = 24


def _seed(rng) -> int:
    return int(rng.integers(0, 2**63))


# --- training traces -------------------------------------------------------


@dataclass
class TrainTrace:
    """Per-iteration training records plus the final model.

    Each record is a flat dict with at least ``iteration`` and ``phase``;
    other common keys are ``avg_loglik``, ``grad_norm``, ``beta_eff`` and
    ``moment_gap``.
    """

    records: list[dict] = field(default_factory=list)
    model: object = None

    def log(self, iteration: int, phase: str, **metrics):
        if self.records and iteration <= self.records[-1]["iteration"]:
            raise ValueError("iteration indices must be strictly increasing")
        rec = {"iteration": int(iteration), "phase": phase}
        rec.update({k: (None if v is None else float(v)) for k, v in metrics.items()})
        self.records.append(rec)

    def column(self, key: str) -> list:
        return [r.get(key) for r in self.records]

    def last(self, key: str):
        for r in reversed(self.records):
            if r.get(key) is not None:
                return r[key]
        return None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def __len__(self):
        return len(self.records)


# --- restricted Boltzmann machines ----------------------------------------


@dataclass(frozen=True)
class Rbm:
    """Binary RBM with E(v, h) = -a.v - b.h - v.W.h over units in {0, 1}."""

    a: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        a, b, W = (np.array(x, dtype=float) for x in (self.a, self.b, self.W))
        if W.shape != (len(a), len(b)):
            raise ValueError(f"W has shape {W.shape}, expected {(len(a), len(b))}")
        if not all(np.all(np.isfinite(x)) for x in (a, b, W)):
            raise ValueError("RBM parameters must be finite")
        for name, x in (("a", a), ("b", b), ("W", W)):
            x.setflags(write=False)
            object.__setattr__(self, name, x)

    @classmethod
    def random(cls, n_visible: int, n_hidden: int, rng, scale: float = 0.01) -> "Rbm":
        rng = np.random.default_rng(rng)
        return cls(np.zeros(n_visible), np.zeros(n_hidden), scale * rng.standard_normal((n_visible, n_hidden)))

    @property
    def n_visible(self) -> int:
        return len(self.a)

    @property
    def n_hidden(self) -> int:
        return len(self.b)

    def updated(self, da, db, dW) -> "Rbm":
        return Rbm(self.a + da, self.b + db, self.W + dW)

    def hidden_probs(self, v) -> np.ndarray:
        return expit(np.asarray(v, dtype=float) @ self.W + self.b)

    def visible_probs(self, h) -> np.ndarray:
        return expit(np.asarray(h, dtype=float) @ self.W.T + self.a)

    def joint_model(self) -> BinaryModel:
        """Pairwise {0,1} model over visible units followed by hidden units."""
        nv, nh = self.W.shape
        i, j = np.meshgrid(np.arange(nv), np.arange(nh), indexing="ij")
        edges = np.stack([i.ravel(), nv + j.ravel()], axis=1)
        return BinaryModel(np.concatenate([self.a, self.b]), edges, self.W.ravel())

    def to_text(self) -> str:
        return textio.dumps_bundle("rbm", {}, {"a": self.a, "b": self.b, "W": self.W})

    @classmethod
    def from_text(cls, text: str) -> "Rbm":
        _, _, arrays = textio.loads_bundle(text, "rbm")
        return cls(arrays["a"].astype(float), arrays["b"].astype(float), arrays["W"].astype(float))


def _check_binary(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or not np.all((data == 0) | (data == 1)):
        raise ValueError("RBM data must be a 2-d array of 0/1 values")
    return data


def rbm_positive_phase(rbm: Rbm, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Data statistics <v>, <h>, <v h^T> with h summed out analytically."""
    v = np.asarray(v, dtype=float)
    ph = rbm.hidden_probs(v)
    return v.mean(axis=0), ph.mean(axis=0), v.T @ ph / len(v)


def _negative_from_samples(rbm: Rbm, v, h):
    v = np.asarray(v, dtype=float)
    h = np.asarray(h, dtype=float)
    return v.mean(axis=0), h.mean(axis=0), v.T @ h / len(v)


def _apply(rbm, pos, neg, rate):
    return rbm.updated(*(rate * (p - n) for p, n in zip(pos, neg)))


def rbm_cd_step(rbm: Rbm, minibatch, k: int, rate: float, rng) -> Rbm:
    """One CD-k update.

    The negative chain starts at the data and alternates k full Gibbs steps;
    its final hidden statistics use p(h|v) rather than a sampled h.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    v0 = _check_binary(minibatch)
    rng = np.random.default_rng(rng)
    pos = rbm_positive_phase(rbm, v0)
    v = v0
    for _ in range(k):
        h = (rng.random((len(v), rbm.n_hidden)) < rbm.hidden_probs(v)).astype(float)
        v = (rng.random((len(v), rbm.n_visible)) < rbm.visible_probs(h)).astype(float)
    neg = _negative_from_samples(rbm, v, rbm.hidden_probs(v))
    return _apply(rbm, pos, neg, rate)


def _hidden_configs(n_hidden: int) -> np.ndarray:
    if n_hidden > MAX_EXACT_HIDDEN:
        raise ModelSizeError(f"{n_hidden} hidden units exceeds the exact cap of {MAX_EXACT_HIDDEN}")
    return spins_to_bits(index_to_spins(np.arange(2**n_hidden), n_hidden)).astype(float)


def _hidden_marginal_logits(rbm: Rbm, H) -> np.ndarray:
    """Unnormalized log p(h) = b.h + sum_i softplus(a_i + (W h)_i)."""
    return H @ rbm.b + np.logaddexp(0.0, H @ rbm.W.T + rbm.a).sum(axis=1)


def rbm_log_partition(rbm: Rbm) -> float:
    return float(logsumexp(_hidden_marginal_logits(rbm, _hidden_configs(rbm.n_hidden))))


def rbm_free_energy(rbm: Rbm, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return -(v @ rbm.a) - np.logaddexp(0.0, v @ rbm.W + rbm.b).sum(axis=-1)


def rbm_exact_avg_loglik(rbm: Rbm, dataset) -> float:
    """Average exact log-likelihood, summing the hidden layer analytically."""
    v = _check_binary(dataset)
    return float(np.mean(-rbm_free_energy(rbm, v)) - rbm_log_partition(rbm))


def rbm_exact_gradient(rbm: Rbm, dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of :func:`rbm_exact_avg_loglik` w.r.t. (a, b, W)."""
    v = _check_binary(dataset)
    pos = rbm_positive_phase(rbm, v)
    H = _hidden_configs(rbm.n_hidden)
    logits = _hidden_marginal_logits(rbm, H)
    ph = np.exp(logits - logsumexp(logits))
    ev = expit(H @ rbm.W.T + rbm.a)  # E[v | h] per hidden configuration
    neg = (ph @ ev, ph @ H, (ev * ph[:, None]).T @ H)
    return tuple(p - n for p, n in zip(pos, neg))


def rbm_spin_model(rbm: Rbm) -> IsingModel:
    return binary_to_spin(rbm.joint_model())[0]


def rbm_quale_step(rbm: Rbm, minibatch, sampler: Sampler, beta_hat: float, rate: float,
                   num_reads: int = 1000, seed: int = 0) -> Rbm:
    """RBM update with the negative phase drawn from ``sampler``.

    The joint model is converted to spins and sent as ``theta / beta_hat`` so
    that a device at inverse temperature ``beta_hat`` samples the model at
    beta = 1.
    """
    if not beta_hat > 0:
        raise ValueError("beta_hat must be positive")
    v0 = _check_binary(minibatch)
    pos = rbm_positive_phase(rbm, v0)
    control = rbm_spin_model(rbm).scaled(1.0 / beta_hat)
    reads = sampler.sample(SampleRequest(control, 1.0, num_reads, seed=seed)).to_array()
    u = spins_to_bits(reads).astype(float)
    neg = _negative_from_samples(rbm, u[:, : rbm.n_visible], u[:, rbm.n_visible :])
    return _apply(rbm, pos, neg, rate)


# --- effective temperature -------------------------------------------------


@dataclass(frozen=True)
class TemperatureEstimate:
    beta_eff: float
    stderr: float
    points: int


class EstimationError(RuntimeError):
    pass



def _log_odds_slope(x, k, n):
    """Binomial regression of log(k / (n - k)) on x; returns (slope, stderr).

    The log odds of a read coming from the second set differ from
    log(f2 / f1) only by a constant, so the slope is that of the log ratio.
    """
    def nll(w):
        z = w[0] + w[1] * x
        return float(np.sum(n * np.logaddexp(0.0, z) - k * z))

    def grad(w):
        r = n * expit(w[0] + w[1] * x) - k
        return np.array([r.sum(), (r * x).sum()])

    w = minimize(nll, np.zeros(2), jac=grad, method="BFGS", options={"gtol": 1e-10}).x
    p = expit(w[0] + w[1] * x)
    v = n * p * (1 - p)
    info = np.array([[v.sum(), (v * x).sum()], [(v * x).sum(), (v * x * x).sum()]])
    return float(w[1]), float(np.sqrt(np.linalg.inv(info)[1, 1]))


def estimate_beta_eff(model: IsingModel, sampler: Sampler, alpha: float = 0.8, num_reads: int = 10_000,
                      bins: int | None = None, seed: int = 0, min_count: int = 10) -> TemperatureEstimate:
    """Estimate the inverse temperature at which ``sampler`` realizes ``model``.

    Two sample sets are drawn, at the control parameters and at ``alpha``
    times them. If the sampler is Boltzmann at some beta, the log ratio of the
    energy histograms is linear in the energy with slope ``-beta (alpha - 1)``;
    a regression of the log ratio on energy over the populated bins gives beta.

    Energies are binned by exact value for models of up to 16 spins and
    into ``bins`` (default 30) uniform bins otherwise. Bins with at least
    ``min_count`` reads across both sets enter a binomial regression of the
    per-bin log odds on the bin's mean energy.
    """
    if alpha == 1 or not alpha > 0:
        raise ValueError("alpha must be positive and different from 1")
    s1 = sampler.sample(SampleRequest(model, 1.0, num_reads, seed=seed))
    s2 = sampler.sample(SampleRequest(model.scaled(alpha), 1.0, num_reads, seed=seed + 1))
    e1 = energy(model, s1.configs)
    e2 = energy(model, s2.configs)
    if bins is None and model.n <= 16:
        levels = np.unique(np.round(np.concatenate([e1, e2]), 9))
        key1 = np.searchsorted(levels, np.round(e1, 9))
        key2 = np.searchsorted(levels, np.round(e2, 9))
        nb = len(levels)
    else:
        nb = bins or 30
        lo, hi = min(e1.min(), e2.min()), max(e1.max(), e2.max())
        edges = np.linspace(lo, hi + 1e-12, nb + 1)
        key1 = np.clip(np.searchsorted(edges, e1, side="right") - 1, 0, nb - 1)
        key2 = np.clip(np.searchsorted(edges, e2, side="right") - 1, 0, nb - 1)
    c1 = np.bincount(key1, weights=s1.counts, minlength=nb)
    c2 = np.bincount(key2, weights=s2.counts, minlength=nb)
    esum = np.bincount(key1, weights=s1.counts * e1, minlength=nb) + np.bincount(key2, weights=s2.counts * e2, minlength=nb)
    # selecting on the pooled count keeps the per-bin split c2 | c1 + c2 unbiased
    ok = (c1 + c2) >= min_count
    if ok.sum() < 2:
        raise EstimationError("fewer than two energy bins with enough counts")
    n, k = c1[ok] + c2[ok], c2[ok]
    E = esum[ok] / n
    if np.ptp(E) <= 0:
        raise EstimationError("energy bins do not span an energy range")
    slope, se = _log_odds_slope(E - np.average(E, weights=n), k, n)
    beta = -slope / (alpha - 1.0)
    if not beta > 0:
        raise EstimationError(f"non-positive temperature estimate ({beta:.4g})")
    return TemperatureEstimate(float(beta), float(se / abs(alpha - 1.0)), int(ok.sum()))


# --- warm-restart schedule -------------------------------------------------


@dataclass(frozen=True)
class Phase:
    """One block of a training schedule.

    ``kind`` is ``"cd1"``, ``"quale-estimated"`` (temperature re-estimated
    every iteration) or ``"quale-fixed"`` (``beta`` assumed known).
    """

    kind: str
    iterations: int
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in ("cd1", "quale-estimated", "quale-fixed"):
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if self.kind == "quale-fixed" and not (self.beta and self.beta > 0):
            raise ValueError("quale-fixed phases need a positive beta")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


@dataclass
class RbmTrainConfig:
    rate: float = 0.05
    minibatch: int | None = None
    num_reads: int = 1000
    estimate_reads: int = 5000
    alpha: float = 0.8
    exact_eval: bool = True
    seed: int = 0


def rbm_train_restart(rbm: Rbm, dataset, schedule: Sequence[Phase], sampler: Sampler | None = None,
                      config: RbmTrainConfig | None = None, checkpoint=None) -> TrainTrace:
    """Run the phases of ``schedule`` in order on shared parameters.

    Iterations are numbered from 1 across phases; ``avg_loglik`` is logged
    after every iteration when ``config.exact_eval`` is set. ``checkpoint``
    may be a callable ``(iteration, rbm)`` invoked after each iteration.
    The final parameters are stored on ``trace.model``.
    """
    config = config or RbmTrainConfig()
    data = _check_binary(dataset)
    rng = np.random.default_rng(config.seed)
    trace = TrainTrace()
    it = 0
    beta_hat = 1.0
    for phase in schedule:
        if phase.kind != "cd1" and sampler is None:
            raise ValueError(f"phase {phase.kind} needs a sampler")
        for _ in range(phase.iterations):
            it += 1
            if config.minibatch:
                batch = data[rng.choice(len(data), size=config.minibatch, replace=False)]
            else:
                batch = data
            beta_used = None
            if phase.kind == "cd1":
                new = rbm_cd_step(rbm, batch, 1, config.rate, rng)
            else:
                if phase.kind == "quale-fixed":
                    beta_hat = phase.beta
                else:
                    # probing at the previous scale keeps the device near beta = 1;
                    # the estimate is in units of the probe's energy, i.e. of the control parameters
                    probe = rbm_spin_model(rbm).scaled(1.0 / beta_hat)
                    est = estimate_beta_eff(probe, sampler, config.alpha, config.estimate_reads, seed=_seed(rng))
                    beta_hat = est.beta_eff
                beta_used = beta_hat
                new = rbm_quale_step(rbm, batch, sampler, beta_hat, config.rate, config.num_reads, _seed(rng))
            grad = np.sqrt(sum(np.sum((x - y) ** 2) for x, y in zip((new.a, new.b, new.W), (rbm.a, rbm.b, rbm.W))))
            rbm = new
            ll = rbm_exact_avg_loglik(rbm, data) if config.exact_eval else None
            trace.log(it, phase.kind, avg_loglik=ll, grad_norm=grad / config.rate if config.rate else 0.0,
                      beta_eff=beta_used)
            if checkpoint is not None:
                checkpoint(it, rbm)
    trace.model = rbm
    return trace


# --- fully visible Boltzmann machines -------------------------------------


def fvbm_avg_loglik(model: IsingModel, data, beta: float = 1.0) -> float:
    data = check_spins(data, model.n)
    dist = enumerate_distribution(model, beta)
    return float(-beta * np.mean(energy(model, data)) - dist.log_Z)


def fvbm_exact_gradient(model: IsingModel, data) -> np.ndarray:
    """Gradient of :func:`fvbm_avg_loglik` (beta = 1) w.r.t. ``[h, J]``."""
    data_m = moments_of(check_spins(data, model.n), model.edges)
    model_m = exact_moments(enumerate_distribution(model, 1.0), model)
    return data_m.flat() - model_m.flat()


@dataclass
class FvbmConfig:
    """Settings for :func:`fvbm_train`.

    The learning rate at iteration t (from 0) is
    ``learning_rate / (1 + t / decay)``; ``decay=None`` keeps it constant.
    Without an embedding ``edges`` defaults to the complete graph. With an
    embedding, ``topology`` and the logical ``edges`` are required and every
    physical coupling realizing them (chains included) is trained.
    """

    learning_rate: float = 0.02
    decay: float | None = None
    iterations: int = 200
    minibatch: int | None = None
    num_reads: int = 1000
    momentum: float = 0.0
    edges: np.ndarray | None = None
    embedding: EmbeddingMap | None = None
    topology: Topology | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.iterations < 0 or self.num_reads < 1:
            raise ValueError("learning rate, iterations and num_reads must be positive")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be positive")
        if self.embedding is not None and (self.topology is None or self.edges is None):
            raise ValueError("embedded training needs both a topology and logical edges")

    def rate(self, t: int) -> float:
        return self.learning_rate if not self.decay else self.learning_rate / (1.0 + t / self.decay)


def fvbm_initial_model(n_logical: int, config: FvbmConfig) -> IsingModel:
    if config.embedding is None:
        edges = complete_edges(n_logical) if config.edges is None else np.asarray(config.edges).reshape(-1, 2)
        return IsingModel.zeros(n_logical, edges)
    logical = IsingModel.zeros(n_logical, config.edges)
    base = embed_model(logical, config.embedding, config.topology)
    trainable = physical_edges(config.embedding, config.topology, config.edges)
    lookup = base.couplings()
    return IsingModel.from_couplings(base.h, {e: lookup.get(e, 0.0) for e in trainable})


def moment_update(model: IsingModel, data_moments: MomentVector, sampler_moments: MomentVector,
                  rate: float, node_mask=None) -> IsingModel:
    """Gray-box step h += rate (<s>_data - <s>_sampler), J likewise."""
    dh = rate * (data_moments.means - sampler_moments.means)
    if node_mask is not None:
        dh = np.where(node_mask, dh, 0.0)
    dJ = rate * (data_moments.correlations - sampler_moments.correlations)
    return model.with_params(model.h + dh, model.J + dJ)


def fvbm_train(dataset, sampler: Sampler, config: FvbmConfig, init: IsingModel | None = None):
    """Moment-matching training that only sees sampler reads.

    Returns ``(control_parameters, trace)``. With an embedding the returned
    parameters live on the physical graph; data moments come from
    chain-replicated data.
    """
    data = check_spins(dataset)
    n_logical = data.shape[1]
    emb = config.embedding
    if emb is not None and emb.num_logical != n_logical:
        raise ValueError("embedding and data disagree on the number of logical variables")
    model = fvbm_initial_model(n_logical, config) if init is None else init
    if emb is None:
        phys_data = data
        node_mask = None
    else:
        phys_data = encode_config(data, emb, config.topology.n)
        node_mask = np.zeros(config.topology.n, dtype=bool)
        node_mask[list(emb.owner())] = True
    rng = np.random.default_rng(config.seed)
    full_moments = moments_of(phys_data, model.edges)
    trace = TrainTrace()
    velocity = np.zeros(model.n + model.num_edges)
    for t in range(config.iterations):
        if config.minibatch:
            idx = rng.choice(len(phys_data), size=min(config.minibatch, len(phys_data)), replace=False)
            dm = moments_of(phys_data[idx], model.edges)
        else:
            dm = full_moments
        ss = sampler.sample(SampleRequest(model, 1.0, config.num_reads, seed=_seed(rng)))
        sm = empirical_moments(ss, model.edges)
        step = moment_update(IsingModel.zeros(model.n, model.edges), dm, sm, config.rate(t), node_mask).params()
        velocity = config.momentum * velocity + step
        p = model.params() + velocity
        model = model.with_params(p[: model.n], p[model.n :])
        gap = np.abs(dm.correlations - sm.correlations).max(initial=0.0)
        dmean = np.abs(dm.means - sm.means)
        gap = max(gap, (dmean if node_mask is None else dmean[node_mask]).max(initial=0.0))
        trace.log(t + 1, "fvbm", moment_gap=gap, grad_norm=np.linalg.norm(step) / config.rate(t))
    trace.model = model
    return model, trace


def logical_moments(model: IsingModel, sampler: Sampler, logical_edges, embedding: EmbeddingMap | None = None,
                    num_reads: int = 10_000, seed: int = 0, calls: int = 1) -> MomentVector:
    """Moments of sampler reads, decoded to logical variables when embedded.

    Reads from ``calls`` separate requests are pooled, which averages over
    per-call device noise as well as over reads.
    """
    rng = np.random.default_rng([seed, 2])
    seeds = [seed] + [_seed(rng) for _ in range(calls - 1)]
    reads = np.concatenate([sampler.sample(SampleRequest(model, 1.0, num_reads, seed=s)).to_array() for s in seeds])
    if embedding is not None:
        reads = decode_config(reads, embedding, np.random.default_rng([seed, 1]))
    return moments_of(reads, logical_edges)


def fvbm_reconstruct(model: IsingModel, sampler: Sampler, corrupted, mask, embedding: EmbeddingMap | None = None,
                     num_reads: int = 200, seed: int = 0) -> np.ndarray:
    """Restore the nodes flagged in ``mask`` given the others.

    Uncorrupted logical nodes are clamped (every node of their chain when
    embedded), the sampler fills in the rest and each corrupted node takes
    its majority value over the reads; ties go to a seeded coin.
    """
    corrupted = check_spins(corrupted).astype(np.int8)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != corrupted.shape:
        raise ValueError("mask and configuration differ in shape")
    if not mask.any():
        return corrupted.copy()
    clamps = {}
    for v in np.flatnonzero(~mask):
        nodes = embedding.chains[v] if embedding is not None else (v,)
        for q in nodes:
            clamps[int(q)] = int(corrupted[v])
    reads = sampler.sample(SampleRequest(model, 1.0, num_reads, clamps, seed)).to_array()
    rng = np.random.default_rng([seed, 2])
    if embedding is not None:
        reads = decode_config(reads, embedding, rng)
    votes = reads.sum(axis=0)
    coin = np.where(rng.random(len(votes)) < 0.5, -1, 1)
    restored = np.where(votes > 0, 1, np.where(votes < 0, -1, coin)).astype(np.int8)
    return np.where(mask, restored, corrupted).astype(np.int8)
