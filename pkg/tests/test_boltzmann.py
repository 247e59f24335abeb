import math

import numpy as np
import pytest

from oracles import brute_distribution, brute_fvbm_avg_loglik, brute_rbm_avg_loglik, central_difference, rel_err
from qahm_lab.boltzmann import (EstimationError, FvbmConfig, Phase, Rbm, RbmTrainConfig, TrainTrace,
                                estimate_beta_eff, fvbm_avg_loglik, fvbm_exact_gradient, fvbm_initial_model,
                                fvbm_reconstruct, fvbm_train, logical_moments, moment_update, rbm_cd_step,
                                rbm_exact_avg_loglik, rbm_exact_gradient, rbm_positive_phase, rbm_quale_step,
                                rbm_spin_model, rbm_train_restart)
from qahm_lab.hardware import bipartite_topology, chimera_clique_layout, complete_topology, encode_config
from qahm_lab.ising import IsingModel, MomentVector, all_configs, enumerate_distribution, exact_moments, random_model
from qahm_lab.samplers import DeviceProfile, DeviceSampler, ExactSampler, SampleRequest, moments_of, sample_exact


def _rbm(nv, nh, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return Rbm(scale * rng.normal(size=nv), scale * rng.normal(size=nh), scale * rng.normal(size=(nv, nh)))


def _bits(n, rows, seed):
    return np.random.default_rng(seed).integers(0, 2, size=(rows, n)).astype(float)


def _flat(parts):
    return np.concatenate([np.ravel(p) for p in parts])


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# --- trace ------------------------------------------------------------------

def test_trace_requires_increasing_iterations():
    tr = TrainTrace()
    tr.log(1, "cd1", avg_loglik=-3.0)
    with pytest.raises(ValueError):
        tr.log(1, "cd1")
    tr.log(5, "quale", beta_eff=2.0)
    assert tr.column("iteration") == [1, 5]
    assert tr.last("avg_loglik") == -3.0
    assert tr.to_jsonl().count("\n") == 2


# --- RBM --------------------------------------------------------------------

def test_rbm_invariants_and_text_round_trip():
    with pytest.raises(ValueError):
        Rbm(np.zeros(3), np.zeros(2), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Rbm(np.zeros(2), np.zeros(1), np.array([[np.nan], [0.0]]))
    r = _rbm(4, 3, 0)
    back = Rbm.from_text(r.to_text())
    assert np.array_equal(back.W, r.W) and np.array_equal(back.a, r.a) and np.array_equal(back.b, r.b)


def test_cd_rejects_bad_inputs():
    r = _rbm(3, 2, 0)
    with pytest.raises(ValueError):
        rbm_cd_step(r, [[0, 1, 2]], 1, 0.1, 0)
    with pytest.raises(ValueError):
        rbm_cd_step(r, [[0, 1, 1]], 0, 0.1, 0)


def test_cd_zero_rate_is_identity():
    r = _rbm(4, 3, 1)
    out = rbm_cd_step(r, _bits(4, 10, 0), 1, 0.0, 0)
    assert np.array_equal(out.W, r.W) and np.array_equal(out.a, r.a) and np.array_equal(out.b, r.b)


def test_positive_phase_matches_enumeration():
    r = _rbm(4, 3, 2)
    v = _bits(4, 7, 1)
    mv, mh, mvh = rbm_positive_phase(r, v)
    H = (all_configs(3) + 1) // 2
    ref_h, ref_vh = np.zeros(3), np.zeros((4, 3))
    for row in v:
        w = np.exp(H @ r.b + row @ r.W @ H.T)
        w /= w.sum()
        ref_h += w @ H
        ref_vh += np.outer(row, w @ H)
    assert np.max(np.abs(mh - ref_h / len(v))) <= 1e-12
    assert np.max(np.abs(mvh - ref_vh / len(v))) <= 1e-12
    assert np.array_equal(mv, v.mean(axis=0))


def test_long_cd_matches_exact_gradient_direction():
    r = _rbm(4, 3, 3, scale=0.4)
    data = _bits(4, 6, 2)
    chains = np.repeat(data, 500, axis=0)
    step = rbm_cd_step(r, chains, 10_000, 1.0, 0)
    update = _flat((step.a - r.a, step.b - r.b, step.W - r.W))
    assert _cos(update, _flat(rbm_exact_gradient(r, data))) >= 0.99


def test_avg_loglik_zero_model():
    data = _bits(5, 9, 0)
    assert rbm_exact_avg_loglik(Rbm(np.zeros(5), np.zeros(2), np.zeros((5, 2))), data) == pytest.approx(-5 * math.log(2), abs=1e-12)


def test_avg_loglik_matches_joint_enumeration():
    r = _rbm(4, 2, 4)
    data = _bits(4, 8, 3)
    assert rbm_exact_avg_loglik(r, data) == pytest.approx(brute_rbm_avg_loglik(r.a, r.b, r.W, data), abs=1e-10)


def test_avg_loglik_is_nonpositive():
    for seed in range(5):
        assert rbm_exact_avg_loglik(_rbm(5, 3, seed, 2.0), _bits(5, 4, seed)) <= 0


@pytest.mark.parametrize("seed", range(5))
def test_rbm_gradient_matches_finite_differences(seed):
    r = _rbm(4, 3, 10 + seed)
    data = _bits(4, 6, seed)
    nv, nh = r.W.shape
    theta = _flat((r.a, r.b, r.W))

    def f(x):
        return rbm_exact_avg_loglik(Rbm(x[:nv], x[nv:nv + nh], x[nv + nh:].reshape(nv, nh)), data)

    assert np.max(rel_err(_flat(rbm_exact_gradient(r, data)), central_difference(f, theta))) <= 1e-4


def test_spin_conversion_preserves_distribution():
    r = _rbm(3, 2, 5)
    spin = rbm_spin_model(r)
    p = enumerate_distribution(spin).probabilities
    U = (all_configs(5) + 1) // 2
    w = np.exp(U[:, :3] @ r.a + U[:, 3:] @ r.b + np.einsum("ki,ij,kj->k", U[:, :3], r.W, U[:, 3:]))
    assert np.max(np.abs(p - w / w.sum())) <= 1e-12


# --- temperature estimation --------------------------------------------------

def test_estimator_recovers_hidden_beta_exact():
    m = random_model(12, 0, 0.5, 0.5)
    est = estimate_beta_eff(m, ExactSampler(hidden_beta=0.7), 0.8, 100_000, seed=1)
    assert abs(est.beta_eff - 0.7) <= 0.05
    assert est.points >= 2 and est.stderr > 0


def test_estimator_self_consistency():
    m = random_model(12, 1, 0.5, 0.5)
    est = estimate_beta_eff(m, ExactSampler(), 0.8, 100_000, seed=2)
    assert abs(est.beta_eff - 1.0) <= 0.05


def test_estimator_on_device():
    m = random_model(12, 2, 0.2, 0.2)
    dev = DeviceSampler(DeviceProfile(complete_topology(12), beta_eff=2.5))
    est = estimate_beta_eff(m, dev, 0.8, 100_000, seed=3)
    assert abs(est.beta_eff - 2.5) <= 0.15


def test_estimator_binned_path():
    m = random_model(18, 3, 0.3, 0.3)
    est = estimate_beta_eff(m, DeviceSampler(DeviceProfile(complete_topology(18), beta_eff=1.5, chains=200)),
                            0.8, 50_000, bins=30, seed=4)
    assert abs(est.beta_eff - 1.5) <= 0.15


def test_estimator_errors():
    with pytest.raises(ValueError):
        estimate_beta_eff(IsingModel.zeros(2), ExactSampler(), alpha=1.0)
    # a field-free, coupling-free model has a single energy level
    with pytest.raises(EstimationError):
        estimate_beta_eff(IsingModel.zeros(3), ExactSampler(), num_reads=1000)


# --- QuALe step --------------------------------------------------------------

def _quale_update(r, data, sampler, beta_hat, reads, seed):
    out = rbm_quale_step(r, data, sampler, beta_hat, 1.0, reads, seed)
    return _flat((out.a - r.a, out.b - r.b, out.W - r.W))


def test_quale_zero_rate_and_bad_beta():
    r = _rbm(3, 2, 0)
    out = rbm_quale_step(r, _bits(3, 4, 0), ExactSampler(), 1.0, 0.0, 100)
    assert np.array_equal(out.W, r.W)
    with pytest.raises(ValueError):
        rbm_quale_step(r, _bits(3, 4, 0), ExactSampler(), 0.0, 0.1)


def test_quale_ideal_sampler_matches_exact_gradient():
    r = _rbm(4, 3, 6)
    data = _bits(4, 8, 4)
    upd = _quale_update(r, data, ExactSampler(), 1.0, 100_000, 0)
    assert _cos(upd, _flat(rbm_exact_gradient(r, data))) >= 0.99


def test_quale_device_with_known_temperature():
    r = _rbm(4, 3, 7)
    data = _bits(4, 8, 5)
    dev = DeviceSampler(DeviceProfile(bipartite_topology(4, 3), beta_eff=2.0, range_h=10.0, range_J=10.0))
    upd = _quale_update(r, data, dev, 2.0, 100_000, 1)
    assert _cos(upd, _flat(rbm_exact_gradient(r, data))) >= 0.99


def test_quale_is_unbiased():
    r = _rbm(4, 3, 8)
    data = _bits(4, 8, 6)
    runs = np.array([_quale_update(r, data, ExactSampler(), 1.0, 2000, s) for s in range(50)])
    exact = _flat(rbm_exact_gradient(r, data))
    se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
    assert np.all(np.abs(runs.mean(axis=0) - exact) <= 3 * se + 1e-12)


# --- restart schedule --------------------------------------------------------

def test_phase_validation():
    with pytest.raises(ValueError):
        Phase("bogus", 3)
    with pytest.raises(ValueError):
        Phase("quale-fixed", 3)
    with pytest.raises(ValueError):
        Phase("cd1", -1)


def test_restart_schedule_runs_phases_in_order():
    data = _bits(4, 6, 7)
    seen = []
    tr = rbm_train_restart(_rbm(4, 2, 0, 1.0), data, [Phase("cd1", 3), Phase("quale-estimated", 2),
                                                       Phase("quale-fixed", 2, beta=1.0)],
                           ExactSampler(), RbmTrainConfig(num_reads=500, estimate_reads=20_000),
                           checkpoint=lambda it, rbm: seen.append(it))
    assert tr.column("phase") == ["cd1"] * 3 + ["quale-estimated"] * 2 + ["quale-fixed"] * 2
    assert tr.column("iteration") == list(range(1, 8)) == seen
    assert all(ll <= 0 for ll in tr.column("avg_loglik"))
    assert tr.column("beta_eff")[:3] == [None] * 3
    assert all(abs(b - 1.0) < 0.15 for b in tr.column("beta_eff")[3:5])
    assert tr.column("beta_eff")[5:] == [1.0, 1.0]
    assert isinstance(tr.model, Rbm)


def test_restart_needs_sampler_for_quale():
    with pytest.raises(ValueError):
        rbm_train_restart(_rbm(3, 2, 0), _bits(3, 4, 0), [Phase("quale-estimated", 1)])


def test_restart_is_deterministic():
    data = _bits(4, 6, 8)
    runs = [rbm_train_restart(_rbm(4, 2, 0, 0.1), data, [Phase("cd1", 5)], config=RbmTrainConfig(seed=3))
            for _ in range(2)]
    assert runs[0].to_jsonl() == runs[1].to_jsonl()


def test_cd1_improves_likelihood_on_structured_data():
    data = np.array([[1, 1, 0, 0], [0, 0, 1, 1]] * 5, dtype=float)
    tr = rbm_train_restart(_rbm(4, 2, 0, 0.01), data, [Phase("cd1", 200)], config=RbmTrainConfig(rate=0.1))
    assert tr.records[-1]["avg_loglik"] > tr.records[0]["avg_loglik"]


# --- FVBM --------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_fvbm_gradient_matches_finite_differences(seed):
    m = random_model(5, seed, edges=[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (0, 2)])
    data = sample_exact(SampleRequest(random_model(5, 100 + seed), 1.0, 30, seed=seed)).to_array()

    def f(x):
        return fvbm_avg_loglik(m.with_params(x[:5], x[5:]), data)

    assert np.max(rel_err(fvbm_exact_gradient(m, data), central_difference(f, m.params()))) <= 1e-4


def test_fvbm_loglik_matches_brute_force():
    m = random_model(4, 3)
    data = sample_exact(SampleRequest(m, 1.0, 20, seed=0)).to_array()
    assert fvbm_avg_loglik(m, data) == pytest.approx(brute_fvbm_avg_loglik(m.h, m.couplings(), data), abs=1e-12)


def test_moment_update_fixed_point():
    m = random_model(4, 1)
    mv = exact_moments(enumerate_distribution(m), m)
    assert np.array_equal(moment_update(m, mv, mv, 0.5).params(), m.params())


def test_moment_update_direction_and_mask():
    m = IsingModel.zeros(2, [(0, 1)])
    dm = MomentVector(np.array([0.5, -0.5]), np.array([0.2]))
    sm = MomentVector(np.zeros(2), np.zeros(1))
    out = moment_update(m, dm, sm, 0.1, node_mask=np.array([True, False]))
    assert out.h.tolist() == pytest.approx([0.05, 0.0]) and out.J.tolist() == pytest.approx([0.02])


def test_fvbm_config_validation():
    with pytest.raises(ValueError):
        FvbmConfig(learning_rate=0)
    topo, emb, edges = chimera_clique_layout(1)
    with pytest.raises(ValueError):
        FvbmConfig(embedding=emb)
    assert FvbmConfig(learning_rate=0.1, decay=10).rate(10) == pytest.approx(0.05)


def test_fvbm_learns_moments_from_exact_sampler():
    truth = random_model(5, 4, 0.5, 0.5)
    data = sample_exact(SampleRequest(truth, 1.0, 20_000, seed=1)).to_array()
    cfg = FvbmConfig(learning_rate=0.1, iterations=300, num_reads=20_000)
    model, tr = fvbm_train(data, ExactSampler(), cfg)
    learned = exact_moments(enumerate_distribution(model), model)
    assert learned.max_abs_diff(moments_of(data, model.edges)) <= 0.02
    assert len(tr) == 300 and tr.model is model


def test_fvbm_gray_box_on_device():
    truth = random_model(6, 5, 0.2, 0.2)
    data = sample_exact(SampleRequest(truth, 1.0, 20_000, seed=2)).to_array()
    dev = DeviceSampler(DeviceProfile(complete_topology(6), beta_eff=2.5, sigma_J=0.05, chains=1000, burn_in=100))
    model, _ = fvbm_train(data, dev, FvbmConfig(learning_rate=0.02, decay=100, iterations=400))
    got = logical_moments(model, dev, model.edges, num_reads=1000, seed=9, calls=100)
    assert got.max_abs_diff(moments_of(data, model.edges)) <= 0.05


def test_fvbm_embedded_initial_model():
    topo, emb, edges = chimera_clique_layout(2)
    cfg = FvbmConfig(edges=edges[:5], embedding=emb, topology=topo)
    m = fvbm_initial_model(8, cfg)
    assert m.n == topo.n
    cp = m.couplings()
    for chain in emb.chains:
        for p, q in zip(chain, chain[1:]):
            if topo.has_edge(p, q):
                assert cp[(min(p, q), max(p, q))] == emb.chain_coupling


def test_fvbm_embedded_data_mismatch():
    topo, emb, edges = chimera_clique_layout(1)
    with pytest.raises(ValueError):
        fvbm_train(np.ones((3, 5)), ExactSampler(), FvbmConfig(edges=edges, embedding=emb, topology=topo))


def test_reconstruct_empty_mask_returns_input():
    x = np.array([1, -1, 1, 1], dtype=np.int8)
    out = fvbm_reconstruct(random_model(4, 0), ExactSampler(), x, np.zeros(4, bool))
    assert np.array_equal(out, x)


def test_reconstruct_full_mask_samples_model():
    m = random_model(4, 1, 0.5, 0.5)
    outs = np.array([fvbm_reconstruct(m, ExactSampler(), np.ones(4), np.ones(4, bool), num_reads=1, seed=s)
                     for s in range(2000)])
    ref = exact_moments(enumerate_distribution(m), m)
    assert moments_of(outs, m.edges).max_abs_diff(ref) <= 0.1


def test_reconstruct_keeps_clean_nodes_and_restores_strong_model():
    m = IsingModel.from_couplings(np.zeros(4), {(i, j): 2.0 for i in range(4) for j in range(i + 1, 4)})
    x = np.array([1, 1, -1, 1])
    mask = np.array([False, False, True, False])
    out = fvbm_reconstruct(m, ExactSampler(), x, mask, num_reads=101)
    assert out.tolist() == [1, 1, 1, 1]


def test_reconstruct_through_embedding():
    topo, emb, edges = chimera_clique_layout(1)
    logical = IsingModel.from_couplings(np.zeros(4), {tuple(e): 1.5 for e in edges.tolist()})
    from qahm_lab.hardware import embed_model
    phys = embed_model(logical, emb, topo)
    x = np.array([-1, -1, 1, -1])
    out = fvbm_reconstruct(phys, ExactSampler(), x, np.array([False, False, True, False]), emb, num_reads=51)
    assert out.tolist() == [-1, -1, -1, -1]


def test_encoded_data_moments_replicate_chains():
    topo, emb, edges = chimera_clique_layout(1)
    data = np.array([[1, -1, 1, -1], [1, 1, -1, -1]])
    phys = encode_config(data, emb, topo.n)
    for v, chain in enumerate(emb.chains):
        assert np.all(phys[:, list(chain)] == data[:, [v]])
