"""Quantum-like probability models for human judgement data.

Covers the law-of-total-probability check and its interference fit for the
two-stage gamble, two-dimensional sequential-measurement models of question
order effects, the parameter-free order equality, and AIC comparison.

Survey tables are plain text, one row per (order, answer pair)::

    # comment
    order answer count
    AB YY 412
    AB YN 88
    ...

``order`` is ``AB`` (question A asked first) or ``BA``; ``answer`` gives the
answers in the order they were asked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

ANSWERS = ("YY", "YN", "NY", "NN")
ORDERS = ("AB", "BA")
_TOL = 1e-12


def _check_prob(name, x):
    if not (0.0 <= x <= 1.0) or not math.isfinite(x):
        raise ValueError(f"{name} must be a probability in [0, 1], got {x}")


@dataclass(frozen=True)
class GambleStats:
    """Conditional and marginal rates of accepting a second gamble."""

    p_g_given_w: float
    p_g_given_l: float
    p_g: float
    p_w: float = 0.5

    def __post_init__(self):
        for name in ("p_g_given_w", "p_g_given_l", "p_g", "p_w"):
            _check_prob(name, getattr(self, name))


@dataclass(frozen=True)
class TotalProbabilityReport:
    violation: bool
    margin: float
    classical_prediction: float | None = None


_ROUNDING = 8 * np.finfo(float).eps


def check_total_probability(stats: GambleStats, known_prior: bool = False) -> TotalProbabilityReport:
    """Test ``p_g`` against the classical law of total probability.

    Without a known prior any mixture of the two conditionals is allowed, so
    the test is whether ``p_g`` falls outside their range; ``margin`` is the
    distance to that range. With a known prior the prediction is the mixture
    itself and ``margin`` is ``|p_g - prediction|``.
    """
    lo = min(stats.p_g_given_w, stats.p_g_given_l)
    hi = max(stats.p_g_given_w, stats.p_g_given_l)
    outside = max(lo - stats.p_g, stats.p_g - hi, 0.0)
    if not known_prior:
        return TotalProbabilityReport(outside > 0, outside)
    pred = stats.p_w * stats.p_g_given_w + (1 - stats.p_w) * stats.p_g_given_l
    margin = abs(stats.p_g - pred)
    # a few ulps of rounding in the mixture is not a violation
    return TotalProbabilityReport(margin > _ROUNDING, margin, pred)


@dataclass(frozen=True)
class InterferenceFit:
    cos_theta: float
    theta: float | None
    feasible: bool

    def predict(self, stats: GambleStats) -> float:
        return interference_prob(stats, self.cos_theta)


def interference_prob(stats: GambleStats, cos_theta: float) -> float:
    w, l = stats.p_w * stats.p_g_given_w, (1 - stats.p_w) * stats.p_g_given_l
    return w + l + 2.0 * math.sqrt(w * l) * cos_theta


def fit_interference_gamble(stats: GambleStats) -> InterferenceFit:
    """Solve the interference model for ``cos(theta)``.

    The fit is reported infeasible, not raised, when ``|cos(theta)| > 1`` or
    the interference amplitude vanishes while ``p_g`` differs from the
    classical mixture.
    """
    w, l = stats.p_w * stats.p_g_given_w, (1 - stats.p_w) * stats.p_g_given_l
    amp = 2.0 * math.sqrt(w * l)
    gap = stats.p_g - (w + l)
    if amp == 0.0:
        if gap == 0.0:
            return InterferenceFit(0.0, math.pi / 2, True)
        return InterferenceFit(math.copysign(math.inf, gap), None, False)
    c = gap / amp
    if abs(c) > 1.0:
        return InterferenceFit(c, None, False)
    return InterferenceFit(c, math.acos(c), True)


@dataclass(frozen=True)
class QubitState:
    """Density matrix of a two-level system."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (2, 2):
            raise ValueError("density matrix must be 2x2")
        if not np.allclose(rho, rho.conj().T, atol=_TOL, rtol=0):
            raise ValueError("density matrix must be Hermitian")
        if abs(np.trace(rho) - 1) > _TOL:
            raise ValueError("density matrix must have unit trace")
        if np.linalg.eigvalsh(rho).min() < -_TOL:
            raise ValueError("density matrix must be positive semidefinite")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def pure(cls, amplitudes) -> "QubitState":
        psi = np.asarray(amplitudes, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def from_angle(cls, phi: float) -> "QubitState":
        """Real pure state ``cos(phi)|Y> + sin(phi)|N>`` in the reference basis."""
        return cls.pure([math.cos(phi), math.sin(phi)])

    @classmethod
    def maximally_mixed(cls) -> "QubitState":
        return cls(np.eye(2) / 2)


@dataclass(frozen=True)
class ProjectorBasis:
    """Orthonormal basis ``{|Y>, |N>}`` rotated by ``angle`` (with phase ``phase``).

    ``|Y> = (cos a, e^{i p} sin a)`` and ``|N> = (-sin a, e^{i p} cos a)``.
    """

    angle: float
    phase: float = 0.0

    def vectors(self) -> tuple[np.ndarray, np.ndarray]:
        a, e = self.angle, np.exp(1j * self.phase)
        return (np.array([math.cos(a), e * math.sin(a)]), np.array([-math.sin(a), e * math.cos(a)]))

    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        y, n = self.vectors()
        return np.outer(y, y.conj()), np.outer(n, n.conj())


@dataclass(frozen=True)
class SequentialTable:
    """Joint answer probabilities for one question order, keyed YY, YN, NY, NN."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(4)
        if np.any(p < -_TOL) or abs(p.sum() - 1) > _TOL:
            raise ValueError("sequential table must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __getitem__(self, answer: str) -> float:
        return float(self.p[ANSWERS.index(answer)])


def sequential_probs(state: QubitState, first: ProjectorBasis, second: ProjectorBasis) -> SequentialTable:
    """``p(a, b) = Tr(P_b P_a rho P_a P_b)`` with ``P_a`` from the first basis."""
    out = []
    for pa in first.projectors():
        for pb in second.projectors():
            op = pb @ pa
            out.append(np.trace(op @ state.rho @ op.conj().T).real)
    p = np.clip(np.array(out), 0.0, None)
    return SequentialTable(p / p.sum())


def qq_residual(table_ab: SequentialTable, table_ba: SequentialTable) -> float:
    """``(p_AB(YY) + p_AB(NN)) - (p_BA(YY) + p_BA(NN))``; zero for quantum models."""
    return float((table_ab.p[0] + table_ab.p[3]) - (table_ba.p[0] + table_ba.p[3]))


def order_tables(phi: float, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Tables for both orders under a real pure state and real bases.

    Broadcasts over array arguments; returns arrays of shape ``(..., 4)``.
    """
    phi, a, b = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (phi, a, b)))

    def table(x, y):
        c1, s1 = np.cos(phi - x) ** 2, np.sin(phi - x) ** 2
        c2, s2 = np.cos(x - y) ** 2, np.sin(x - y) ** 2
        return np.stack([c1 * c2, c1 * s2, s1 * s2, s1 * c2], axis=-1)

    return table(a, b), table(b, a)


@dataclass
class SurveyCounts:
    """Answer counts per question order, arrays of shape (4,) in YY, YN, NY, NN order."""

    ab: np.ndarray
    ba: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ab = np.asarray(self.ab, dtype=np.int64).reshape(4)
        self.ba = np.asarray(self.ba, dtype=np.int64).reshape(4)
        if np.any(self.ab < 0) or np.any(self.ba < 0):
            raise ValueError("counts must be nonnegative")

    def to_text(self) -> str:
        lines = ["order answer count"]
        for order, counts in zip(ORDERS, (self.ab, self.ba)):
            lines += [f"{order} {ans} {int(c)}" for ans, c in zip(ANSWERS, counts)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SurveyCounts":
        counts = {o: np.zeros(4, dtype=np.int64) for o in ORDERS}
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#") or line.split() == ["order", "answer", "count"]:
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] not in ORDERS or parts[1] not in ANSWERS:
                raise ValueError(f"line {lineno}: expected '<AB|BA> <YY|YN|NY|NN> <count>'")
            if (parts[0], parts[1]) in seen:
                raise ValueError(f"line {lineno}: duplicate row {parts[0]} {parts[1]}")
            seen.add((parts[0], parts[1]))
            counts[parts[0]][ANSWERS.index(parts[1])] = int(parts[2])
        return cls(counts["AB"], counts["BA"])


def _loglik(counts: SurveyCounts, pab, pba) -> np.ndarray:
    """Multinomial log-likelihood kernel ``sum n log p`` (0 log 0 = 0)."""

    def part(n, p):
        safe = np.where(p > 0, p, 1.0)
        val = np.where(n == 0, 0.0, n * np.log(safe))
        return np.where((p <= 0) & (n > 0), -np.inf, val)

    return (part(counts.ab, pab) + part(counts.ba, pba)).sum(axis=-1)


@dataclass(frozen=True)
class OrderFit:
    phi: float
    a: float
    b: float
    log_likelihood: float
    num_params: int = 3

    def tables(self) -> tuple[SequentialTable, SequentialTable]:
        state = QubitState.from_angle(self.phi)
        A, B = ProjectorBasis(self.a), ProjectorBasis(self.b)
        return sequential_probs(state, A, B), sequential_probs(state, B, A)

    def order_effect(self) -> float:
        """Largest absolute difference between the two order tables."""
        tab, tba = self.tables()
        return float(np.abs(tab.p - tba.p).max())


def fit_order_model(counts: SurveyCounts, grid: int = 181) -> OrderFit:
    """Maximum-likelihood real pure-state order model.

    All three angles are searched on a ``grid``-point lattice over
    ``[0, pi]`` and the best point is refined with Nelder-Mead.
    """
    if counts.ab.sum() + counts.ba.sum() == 0:
        raise ValueError("survey has no responses")
    if counts.ab.sum() == 0 or counts.ba.sum() == 0:
        raise ValueError("both question orders need responses")
    ang = np.linspace(0.0, np.pi, grid)
    A, B = np.meshgrid(ang, ang, indexing="ij")
    best = (-np.inf, 0.0, 0.0, 0.0)
    for phi in ang:
        pab, pba = order_tables(phi, A, B)
        ll = _loglik(counts, pab, pba)
        k = int(np.argmax(ll))
        if ll.flat[k] > best[0]:
            best = (float(ll.flat[k]), float(phi), float(A.flat[k]), float(B.flat[k]))

    def neg(x):
        pab, pba = order_tables(*x)
        v = -_loglik(counts, pab, pba)
        return float(v) if np.isfinite(v) else 1e300

    res = minimize(neg, np.array(best[1:]), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 4000})
    x, ll = (res.x, -res.fun) if -res.fun >= best[0] else (np.array(best[1:]), best[0])
    return OrderFit(float(x[0]), float(x[1]), float(x[2]), float(ll))


def saturated_loglik(counts: SurveyCounts) -> float:
    """Log-likelihood of the unrestricted per-order table (6 free parameters)."""
    ab = counts.ab / max(counts.ab.sum(), 1)
    ba = counts.ba / max(counts.ba.sum(), 1)
    return float(_loglik(counts, ab, ba))


@dataclass(frozen=True)
class AicEntry:
    name: str
    aic: float
    delta: float
    log_likelihood: float
    num_params: int


def aic_compare(candidates) -> list[AicEntry]:
    """Rank candidates by ``AIC = 2k - 2 logL``, ascending, with deltas to the best.

    ``candidates`` is a sequence of mappings with ``log_likelihood``,
    ``num_params`` and optionally ``name``. Ties keep input order.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("aic_compare needs at least one candidate")
    rows = []
    for idx, c in enumerate(candidates):
        aic = 2.0 * c["num_params"] - 2.0 * c["log_likelihood"]
        rows.append((aic, idx, c))
    rows.sort(key=lambda r: (r[0], r[1]))
    best = rows[0][0]
    return [AicEntry(str(c.get("name", idx)), aic, aic - best, float(c["log_likelihood"]), int(c["num_params"]))
            for aic, idx, c in rows]


def synthetic_survey(phi: float, a: float, b: float, respondents: int, seed: int) -> SurveyCounts:
    """Multinomial counts drawn from the order model, ``respondents`` per order."""
    rng = np.random.default_rng(seed)
    pab, pba = order_tables(phi, a, b)
    pab, pba = pab / pab.sum(), pba / pba.sum()
    return SurveyCounts(rng.multinomial(respondents, pab), rng.multinomial(respondents, pba),
                        {"phi": phi, "a": a, "b": b, "seed": seed})


def order_study_report(counts: SurveyCounts, fit: OrderFit | None = None) -> str:
    """Text summary comparing the quantum order model with the saturated table."""
    fit = fit or fit_order_model(counts)
    ranking = aic_compare([
        {"name": "quantum", "log_likelihood": fit.log_likelihood, "num_params": 3},
        {"name": "saturated", "log_likelihood": saturated_loglik(counts), "num_params": 6},
    ])
    tab, tba = fit.tables()
    lines = [
        f"fit phi={fit.phi!r} a={fit.a!r} b={fit.b!r}",
        f"fit table AB {' '.join(f'{x:.6f}' for x in tab.p)}",
        f"fit table BA {' '.join(f'{x:.6f}' for x in tba.p)}",
        f"qq_residual {qq_residual(tab, tba)!r}",
    ]
    lines += [f"model {r.name} k={r.num_params} logL={r.log_likelihood:.6f} AIC={r.aic:.6f} dAIC={r.delta:.6f}"
              for r in ranking]
    return "\n".join(lines) + "\n"
