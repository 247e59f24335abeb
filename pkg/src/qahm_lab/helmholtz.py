"""Helmholtz machine whose deepest layer is sampled by a sampler backend.

The generator runs top-down: a pairwise spin prior over the deepest layer
u2 (sampled by the backend, parameters learned gray-box from moments), a
sigmoid layer u2 -> u1 and an output layer u1 -> v. The output layer mixes
a block of continuous units (Gaussian with tanh mean and fixed noise scale,
clipped to [-1, +1] when emitted) with a block of Bernoulli units. The
recognition network runs bottom-up with Bernoulli layers v -> u1 -> u2 and is
purely classical. Training is wake-sleep.

Hidden units take values in {0, 1}; the prior works in spins s = 2u - 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logsumexp

from . import textio
from .boltzmann import TrainTrace, moment_update
from .ising import (
    MAX_ENUMERATION_SPINS,
    IsingModel,
    ModelSizeError,
    all_configs,
    complete_edges,
    enumerate_distribution,
    spins_to_index,
)
from .samplers import SampleRequest, Sampler, empirical_moments, moments_of

_LOG_2PI = np.log(2.0 * np.pi)


def _seed(rng) -> int:
    return int(rng.integers(0, 2**63))


@dataclass(frozen=True)
class Layer:
    """Stochastic layer mapping ``x_above`` (in_size) to ``x_below`` (out_size).

    The first ``n_continuous`` outputs are Gaussian with mean tanh(pre) and
    standard deviation ``sigma``; the remaining outputs are Bernoulli with
    mean sigmoid(pre). ``W`` has shape (out_size, in_size).
    """

    W: np.ndarray
    b: np.ndarray
    n_continuous: int = 0
    sigma: float = 0.5

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        b = np.array(self.b, dtype=float)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ValueError("layer weights and biases have inconsistent shapes")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        if not 0 <= self.n_continuous <= W.shape[0]:
            raise ValueError("n_continuous outside the output size")
        if self.n_continuous and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @classmethod
    def init(cls, in_size: int, out_size: int, rng, n_continuous: int = 0, sigma: float = 0.5) -> "Layer":
        lim = 0.01 / in_size
        return cls(rng.uniform(-lim, lim, (out_size, in_size)), np.zeros(out_size), n_continuous, sigma)

    @property
    def in_size(self) -> int:
        return self.W.shape[1]

    @property
    def out_size(self) -> int:
        return self.W.shape[0]

    def preact(self, x_above) -> np.ndarray:
        return np.asarray(x_above, dtype=float) @ self.W.T + self.b

    def mean(self, x_above) -> np.ndarray:
        a = self.preact(x_above)
        c = self.n_continuous
        return np.concatenate([np.tanh(a[..., :c]), expit(a[..., c:])], axis=-1)

    def sample(self, x_above, rng) -> np.ndarray:
        mu = self.mean(x_above)
        c = self.n_continuous
        cont = np.clip(mu[..., :c] + self.sigma * rng.standard_normal(mu[..., :c].shape), -1.0, 1.0)
        bern = (rng.random(mu[..., c:].shape) < mu[..., c:]).astype(float)
        return np.concatenate([cont, bern], axis=-1)

    def log_prob(self, x_below, x_above) -> np.ndarray:
        """log p(x_below | x_above) summed over units (Gaussian density for the continuous block)."""
        a = self.preact(x_above)
        x = np.asarray(x_below, dtype=float)
        c = self.n_continuous
        out = np.zeros(a.shape[:-1])
        if c:
            r = (x[..., :c] - np.tanh(a[..., :c])) / self.sigma
            out = out - 0.5 * np.sum(r**2, axis=-1) - c * (np.log(self.sigma) + 0.5 * _LOG_2PI)
        ab, xb = a[..., c:], x[..., c:]
        out = out - np.sum(xb * np.logaddexp(0.0, -ab) + (1.0 - xb) * np.logaddexp(0.0, ab), axis=-1)
        return out

    def delta(self, x_below, x_above) -> tuple[np.ndarray, np.ndarray]:
        """Batch-averaged gradient of log_prob w.r.t. (W, b).

        Bernoulli units give the delta rule (x - mu) x_above^T; continuous
        units weight the residual by the tanh derivative and 1/sigma^2.
        """
        a = self.preact(x_above)
        x = np.asarray(x_below, dtype=float)
        c = self.n_continuous
        t = np.tanh(a[..., :c])
        g = np.concatenate([(x[..., :c] - t) * (1.0 - t**2) / self.sigma**2, x[..., c:] - expit(a[..., c:])], axis=-1)
        g = np.atleast_2d(g)
        xa = np.atleast_2d(np.asarray(x_above, dtype=float))
        return g.T @ xa / len(g), g.mean(axis=0)

    def step(self, x_below, x_above, rate: float) -> "Layer":
        dW, db = self.delta(x_below, x_above)
        return replace(self, W=self.W + rate * dW, b=self.b + rate * db)


@dataclass(frozen=True)
class QahmConfig:
    sizes: tuple[int, int, int] = (266, 120, 16)
    n_continuous: int = 256
    sigma_v: float = 0.5
    rate: float = 0.01
    prior_rate: float = 0.01
    minibatch: int = 100
    prior_reads: int = 1000
    dream_batch: int = 100

    def __post_init__(self):
        if len(self.sizes) != 3 or min(self.sizes) < 1:
            raise ValueError("sizes must be three positive layer widths (visible, middle, deepest)")
        if not 0 <= self.n_continuous <= self.sizes[0]:
            raise ValueError("n_continuous must not exceed the visible size")
        if not self.sigma_v > 0:
            raise ValueError("sigma_v must be positive")


@dataclass(frozen=True)
class Qahm:
    """Generator (prior + layers top-down) and recognition layers bottom-up.

    ``gen[0]`` maps u2 -> u1 and ``gen[1]`` maps u1 -> v; ``rec[0]`` maps
    v -> u1 and ``rec[1]`` maps u1 -> u2.
    """

    prior: IsingModel
    gen: tuple[Layer, Layer]
    rec: tuple[Layer, Layer]
    config: QahmConfig = field(default_factory=QahmConfig)

    def __post_init__(self):
        nv, n1, n2 = self.config.sizes
        shapes = [(self.gen[0].W.shape, (n1, n2)), (self.gen[1].W.shape, (nv, n1)),
                  (self.rec[0].W.shape, (n1, nv)), (self.rec[1].W.shape, (n2, n1))]
        for got, want in shapes:
            if got != want:
                raise ValueError(f"layer shape {got} does not match sizes {self.config.sizes}")
        if self.prior.n != n2:
            raise ValueError("prior size does not match the deepest layer")

    @classmethod
    def init(cls, config: QahmConfig | None = None, seed: int = 0, prior_edges=None) -> "Qahm":
        config = config or QahmConfig()
        nv, n1, n2 = config.sizes
        rng = np.random.default_rng(seed)
        edges = complete_edges(n2) if prior_edges is None else prior_edges
        gen = (Layer.init(n2, n1, rng), Layer.init(n1, nv, rng, config.n_continuous, config.sigma_v))
        rec = (Layer.init(nv, n1, rng), Layer.init(n1, n2, rng))
        return cls(IsingModel.zeros(n2, edges), gen, rec, config)

    @property
    def n_visible(self) -> int:
        return self.config.sizes[0]

    @property
    def n_labels(self) -> int:
        return self.n_visible - self.config.n_continuous

    def to_text(self) -> str:
        c = self.config
        scalars = {"visible": c.sizes[0], "middle": c.sizes[1], "deepest": c.sizes[2],
                   "n_continuous": c.n_continuous, "sigma_v": c.sigma_v, "rate": c.rate,
                   "prior_rate": c.prior_rate, "minibatch": c.minibatch, "prior_reads": c.prior_reads,
                   "dream_batch": c.dream_batch}
        arrays = {"prior.h": self.prior.h, "prior.edges": self.prior.edges, "prior.J": self.prior.J}
        for name, layers in (("gen", self.gen), ("rec", self.rec)):
            for k, layer in enumerate(layers):
                arrays[f"{name}{k}.W"] = layer.W
                arrays[f"{name}{k}.b"] = layer.b
        return textio.dumps_bundle("qahm", scalars, arrays)

    @classmethod
    def from_text(cls, text: str) -> "Qahm":
        _, s, a = textio.loads_bundle(text, "qahm")
        config = QahmConfig((s["visible"], s["middle"], s["deepest"]), s["n_continuous"], float(s["sigma_v"]),
                            float(s["rate"]), float(s["prior_rate"]), s["minibatch"], s["prior_reads"], s["dream_batch"])
        prior = IsingModel(a["prior.h"].astype(float), a["prior.edges"], a["prior.J"].astype(float))
        gen = (Layer(a["gen0.W"], a["gen0.b"]), Layer(a["gen1.W"], a["gen1.b"], config.n_continuous, config.sigma_v))
        rec = (Layer(a["rec0.W"], a["rec0.b"]), Layer(a["rec1.W"], a["rec1.b"]))
        return cls(prior, gen, rec, config)


def _check_visible(qahm: Qahm, v) -> np.ndarray:
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[1] != qahm.n_visible:
        raise ValueError(f"visible vectors have {v.shape[1]} entries, model expects {qahm.n_visible}")
    return v


def prior_reads(qahm: Qahm, sampler: Sampler, num_reads: int, seed: int) -> np.ndarray:
    """Deepest-layer samples from the backend, as {0,1} units."""
    reads = sampler.sample(SampleRequest(qahm.prior, 1.0, num_reads, seed=seed)).to_array()
    rng = np.random.default_rng([seed, 4])
    rng.shuffle(reads)
    return (reads + 1) / 2.0


def recognize(qahm: Qahm, v, rng) -> tuple[np.ndarray, np.ndarray]:
    u1 = qahm.rec[0].sample(v, rng)
    u2 = qahm.rec[1].sample(u1, rng)
    return u1, u2


def wake_step(qahm: Qahm, minibatch, sampler: Sampler, rng, rate: float | None = None,
              prior_rate: float | None = None) -> Qahm:
    """Wake phase: fit the generator to recognition samples of real data.

    The prior is updated gray-box from the difference between the spin
    moments of the recognized u2 and the moments of fresh backend reads.
    """
    rate = qahm.config.rate if rate is None else rate
    prior_rate = qahm.config.prior_rate if prior_rate is None else prior_rate
    v = _check_visible(qahm, minibatch)
    u1, u2 = recognize(qahm, v, rng)
    gen = (qahm.gen[0].step(u1, u2, rate), qahm.gen[1].step(v, u1, rate))
    wake = moments_of(2.0 * u2 - 1.0, qahm.prior.edges)
    reads = sampler.sample(SampleRequest(qahm.prior, 1.0, qahm.config.prior_reads, seed=_seed(rng)))
    prior = moment_update(qahm.prior, wake, empirical_moments(reads, qahm.prior.edges), prior_rate)
    return replace(qahm, prior=prior, gen=gen)


def dream(qahm: Qahm, n: int, sampler: Sampler, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-down ancestral samples (u2, u1, v); continuous v entries are clipped."""
    u2 = prior_reads(qahm, sampler, n, _seed(rng))
    u1 = qahm.gen[0].sample(u2, rng)
    v = qahm.gen[1].sample(u1, rng)
    return u2, u1, v


def sleep_step(qahm: Qahm, sampler: Sampler, dream_batch_size: int, rng, rate: float | None = None) -> Qahm:
    """Sleep phase: fit the recognition layers to the generator's dreams."""
    if dream_batch_size < 1:
        raise ValueError("dream batch size must be positive")
    rate = qahm.config.rate if rate is None else rate
    u2, u1, v = dream(qahm, dream_batch_size, sampler, rng)
    rec = (qahm.rec[0].step(u1, v, rate), qahm.rec[1].step(u2, u1, rate))
    return replace(qahm, rec=rec)


# --- likelihoods -----------------------------------------------------------


def _prior_log_probs(qahm: Qahm) -> np.ndarray:
    if qahm.prior.n > MAX_ENUMERATION_SPINS:
        raise ModelSizeError("prior too large for exact enumeration")
    return np.log(enumerate_distribution(qahm.prior, 1.0).probabilities)


def importance_log_likelihood(qahm: Qahm, v, num_samples: int, rng, chunk: int = 10_000):
    """Importance estimate of log p(v) with the recognition net as proposal.

    Returns per-item ``(log_p_hat, rel_stderr)`` where ``rel_stderr`` is the
    standard error of the weight mean divided by the mean.
    """
    v = _check_visible(qahm, v)
    log_prior = _prior_log_probs(qahm)
    out, rel = np.empty(len(v)), np.empty(len(v))
    for k, x in enumerate(v):
        logw = []
        for start in range(0, num_samples, chunk):
            m = min(chunk, num_samples - start)
            xs = np.broadcast_to(x, (m, len(x)))
            u1, u2 = recognize(qahm, xs, rng)
            idx = spins_to_index((2 * u2 - 1).astype(np.int8))
            lw = (qahm.gen[1].log_prob(xs, u1) + qahm.gen[0].log_prob(u1, u2) + log_prior[idx]
                  - qahm.rec[0].log_prob(u1, xs) - qahm.rec[1].log_prob(u2, u1))
            logw.append(lw)
        lw = np.concatenate(logw)
        shift = lw.max()
        w = np.exp(lw - shift)
        out[k] = shift + np.log(w.mean())
        rel[k] = w.std(ddof=1) / np.sqrt(len(w)) / w.mean()
    return out, rel


def nll_proxy(qahm: Qahm, v, num_samples: int, rng) -> float | None:
    """Average importance-sampled NLL, or None when the prior is not enumerable."""
    if qahm.prior.n > MAX_ENUMERATION_SPINS:
        return None
    return float(-np.mean(importance_log_likelihood(qahm, v, num_samples, rng)[0]))


def generator_nll_exact(qahm: Qahm, dataset, cap: int = 20) -> float:
    """Exact average negative log-likelihood by summing over u1 and u2."""
    _, n1, n2 = qahm.config.sizes
    if n1 + n2 > cap:
        raise ModelSizeError(f"|u1| + |u2| = {n1 + n2} exceeds the cap of {cap}")
    v = _check_visible(qahm, dataset)
    U1 = (all_configs(n1) + 1) / 2.0
    U2 = (all_configs(n2) + 1) / 2.0
    log_prior = _prior_log_probs(qahm)
    # log P(u1|u2) for every pair: (2^n1, 2^n2)
    l12 = np.stack([qahm.gen[0].log_prob(U1, np.broadcast_to(u2, (len(U1), n2))) for u2 in U2], axis=1)
    log_u1 = logsumexp(l12 + log_prior[None, :], axis=1)
    lv = np.stack([qahm.gen[1].log_prob(v, np.broadcast_to(u1, (len(v), n1))) for u1 in U1], axis=1)
    return float(-np.mean(logsumexp(lv + log_u1[None, :], axis=1)))


# --- training --------------------------------------------------------------


def train_wake_sleep(qahm: Qahm, dataset, iterations: int, sampler: Sampler, seed: int = 0,
                     validation=None, log_every: int = 0, proxy_samples: int = 100,
                     checkpoint=None) -> TrainTrace:
    """Alternate wake and sleep steps over shuffled minibatches.

    When ``validation`` and ``log_every`` are given the NLL proxy is logged
    at iteration 0 (before training) and every ``log_every`` iterations with
    a fixed proxy seed. The trained model is stored on ``trace.model``.
    """
    data = _check_visible(qahm, dataset)
    rng = np.random.default_rng(seed)
    trace = TrainTrace()
    proxy_seed = _seed(rng)

    def proxy(model):
        if validation is None or not log_every:
            return None
        return nll_proxy(model, validation, proxy_samples, np.random.default_rng(proxy_seed))

    if log_every:
        trace.log(0, "init", nll_proxy=proxy(qahm))
    order, pos = rng.permutation(len(data)), 0
    mb = min(qahm.config.minibatch, len(data))
    for it in range(1, iterations + 1):
        if pos + mb > len(order):
            order, pos = rng.permutation(len(data)), 0
        batch = data[order[pos : pos + mb]]
        pos += mb
        qahm = wake_step(qahm, batch, sampler, rng)
        qahm = sleep_step(qahm, sampler, qahm.config.dream_batch, rng)
        logged = proxy(qahm) if log_every and it % log_every == 0 else None
        trace.log(it, "wake-sleep", nll_proxy=logged)
        if checkpoint is not None:
            checkpoint(it, qahm)
    trace.model = qahm
    return trace


# --- tasks -----------------------------------------------------------------


class GenerationError(RuntimeError):
    pass


def _emit(qahm: Qahm, u1, rng, pixel_mode: str):
    c = qahm.config.n_continuous
    mu = qahm.gen[1].mean(u1)
    if pixel_mode == "mean":
        pixels = mu[:, :c]
    elif pixel_mode == "sample":
        pixels = np.clip(mu[:, :c] + qahm.config.sigma_v * rng.standard_normal(mu[:, :c].shape), -1, 1)
    else:
        raise ValueError("pixel_mode must be 'mean' or 'sample'")
    labels = (rng.random(mu[:, c:].shape) < mu[:, c:]).astype(float)
    return np.concatenate([pixels, labels], axis=1), mu[:, c:]


def generate(qahm: Qahm, n: int, sampler: Sampler, rng, clamp_label: int | None = None,
             pixel_mode: str = "mean", max_batches: int = 50) -> np.ndarray:
    """Top-down generation of ``n`` visible vectors.

    ``pixel_mode="mean"`` emits the conditional pixel means given the sampled
    hidden units (the usual way such images are displayed); ``"sample"``
    adds the Gaussian noise and clips. With ``clamp_label`` dreams are kept
    only when a class drawn from their normalized label means equals the
    target, and the label block is overwritten with the one-hot target.
    """
    rng = np.random.default_rng(rng)
    if n == 0:
        return np.zeros((0, qahm.n_visible))
    c = qahm.config.n_continuous
    if clamp_label is None:
        u2 = prior_reads(qahm, sampler, n, _seed(rng))
        u1 = qahm.gen[0].sample(u2, rng)
        return _emit(qahm, u1, rng, pixel_mode)[0]
    if not 0 <= clamp_label < qahm.n_labels:
        raise ValueError("clamp_label outside the label block")
    kept = []
    for _ in range(max_batches):
        u2 = prior_reads(qahm, sampler, n, _seed(rng))
        u1 = qahm.gen[0].sample(u2, rng)
        v, label_means = _emit(qahm, u1, rng, pixel_mode)
        p = label_means / label_means.sum(axis=1, keepdims=True)
        drawn = (rng.random((len(p), 1)) > np.cumsum(p, axis=1)).sum(axis=1)
        kept.extend(v[drawn == clamp_label])
        if len(kept) >= n:
            out = np.array(kept[:n])
            out[:, c:] = 0.0
            out[:, c + clamp_label] = 1.0
            return out
    raise GenerationError(f"only {len(kept)} of {n} dreams matched label {clamp_label}")


def reconstruct(qahm: Qahm, corrupted, mask, sampler: Sampler, rng, num_samples: int = 10) -> np.ndarray:
    """Fill in masked visible entries.

    Masked entries are zeroed, passed up to u1 by the recognition net and
    back down through the generator; the masked entries take the average
    generator mean over ``num_samples`` recognition samples. Unmasked
    entries are returned untouched. A fully masked vector carries no
    evidence and is replaced by a fresh generated sample.
    """
    rng = np.random.default_rng(rng)
    x = _check_visible(qahm, corrupted)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = x.copy()
    if not mask.any():
        return out.reshape(np.shape(corrupted))
    full = mask.all(axis=1)
    if full.any():
        out[full] = generate(qahm, int(full.sum()), sampler, rng)
    part = mask.any(axis=1) & ~full
    if part.any():
        z = np.where(mask[part], 0.0, x[part])
        acc = np.zeros_like(z)
        for _ in range(num_samples):
            u1 = qahm.rec[0].sample(z, rng)
            acc += qahm.gen[1].mean(u1)
        out[part] = np.where(mask[part], acc / num_samples, x[part])
    return out.reshape(np.shape(corrupted))


def classify(qahm: Qahm, pixels, rng, num_samples: int = 20) -> np.ndarray:
    """Class distribution from label-unit means under recognized hiddens.

    The label block is zeroed, ``num_samples`` recognition samples of u1 are
    drawn, the generator's label means are averaged and normalized.
    """
    rng = np.random.default_rng(rng)
    c = qahm.config.n_continuous
    px = np.atleast_2d(np.asarray(pixels, dtype=float))
    if px.shape[1] != c:
        raise ValueError(f"expected {c} pixel entries, got {px.shape[1]}")
    v = np.concatenate([px, np.zeros((len(px), qahm.n_labels))], axis=1)
    acc = np.zeros((len(px), qahm.n_labels))
    for _ in range(num_samples):
        u1 = qahm.rec[0].sample(v, rng)
        acc += qahm.gen[1].mean(u1)[:, c:]
    probs = acc / acc.sum(axis=1, keepdims=True)
    return probs[0] if np.ndim(pixels) == 1 else probs


def nearest_neighbor_audit(samples, training) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean nearest training item for every sample (linear scan)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    training = np.atleast_2d(np.asarray(training, dtype=float))
    if samples.size == 0 or training.size == 0:
        raise ValueError("nearest-neighbour audit needs non-empty inputs")
    if samples.shape[1] != training.shape[1]:
        raise ValueError("samples and training items differ in dimension")
    dist = np.empty(len(samples))
    idx = np.empty(len(samples), dtype=np.int64)
    for k, s in enumerate(samples):
        d = np.sqrt(np.sum((training - s) ** 2, axis=1))
        idx[k] = int(np.argmin(d))
        dist[k] = d[idx[k]]
    return dist, idx
