import math

import numpy as np
import pytest

from oracles import brute_distribution, brute_energy, brute_moments, configs
from qahm_lab.ising import (BinaryModel, IsingModel, ModelSizeError, all_configs, binary_to_spin, condition,
                            energy, enumerate_distribution, exact_moments, index_to_spins, random_model,
                            spin_to_binary, spins_to_index)


def test_zero_model_energy_is_zero():
    m = IsingModel.zeros(4, [(0, 1), (2, 3)])
    assert energy(m, [1, -1, 1, 1]) == 0.0


def test_single_coupling_energy():
    m = IsingModel.from_couplings([0, 0], {(0, 1): 1.0})
    assert energy(m, [1, 1]) == -1.0


def test_energy_matches_brute_force_on_random_3_spin_model():
    rng = np.random.default_rng(3)
    h = rng.normal(size=3)
    couplings = {(0, 1): rng.normal(), (0, 2): rng.normal(), (1, 2): rng.normal()}
    m = IsingModel.from_couplings(h, couplings)
    for s in configs(3):
        assert energy(m, s) == pytest.approx(brute_energy(h, couplings, s), abs=1e-12)


def test_batch_energy_uses_same_convention_for_dense_and_sparse_models():
    rng = np.random.default_rng(0)
    dense = random_model(6, rng)
    sparse = IsingModel(dense.h, dense.edges[:4], dense.J[:4])
    S = all_configs(6)
    for m in (dense, sparse):
        c = m.couplings()
        ref = [brute_energy(m.h, c, s) for s in S]
        assert np.allclose(energy(m, S), ref, atol=1e-12)


def test_energy_length_mismatch():
    with pytest.raises(ValueError):
        energy(IsingModel.zeros(3), [1, 1])


def test_energy_rejects_non_spin_values():
    with pytest.raises(ValueError):
        energy(IsingModel.zeros(2), [1, 0])


def test_model_invariants():
    with pytest.raises(ValueError):
        IsingModel([0, 0], [(0, 0)], [1.0])
    with pytest.raises(ValueError):
        IsingModel([0, 0], [(0, 1), (1, 0)], [1.0, 2.0])
    with pytest.raises(ValueError):
        IsingModel([np.inf, 0], [(0, 1)], [1.0])
    m = IsingModel([0, 0, 0], [(2, 0)], [0.5])
    assert m.edges.tolist() == [[0, 2]]
    assert m.coupling_matrix()[2, 0] == m.coupling_matrix()[0, 2] == 0.5


def test_index_convention():
    assert index_to_spins(0, 3).tolist() == [-1, -1, -1]
    assert index_to_spins(1, 3).tolist() == [1, -1, -1]
    assert index_to_spins(6, 3).tolist() == [-1, 1, 1]
    assert spins_to_index([1, -1, 1]) == 5
    assert all_configs(4).tolist() == [list(s) for s in configs(4)]


def test_single_spin_closed_form():
    d = enumerate_distribution(IsingModel([1.0]), 1.0)
    assert d.probabilities[1] == pytest.approx(math.e / (math.e + 1 / math.e), abs=1e-12)
    assert d.probabilities[1] == pytest.approx(0.880797, abs=1e-6)


def test_uniform_three_spin_model():
    d = enumerate_distribution(IsingModel.zeros(3), 1.0)
    assert np.allclose(d.probabilities, 1 / 8, atol=1e-15)
    assert d.log_Z == pytest.approx(3 * math.log(2), abs=1e-12)


def test_beta_is_parameter_scale():
    m = random_model(5, 1)
    a = enumerate_distribution(m, 2.0).probabilities
    b = enumerate_distribution(m.scaled(2.0), 1.0).probabilities
    assert np.max(np.abs(a - b)) <= 1e-12


def test_enumeration_matches_brute_force():
    rng = np.random.default_rng(5)
    m = random_model(5, rng, edges=[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)])
    p, log_z = brute_distribution(m.h, m.couplings(), 0.7)
    d = enumerate_distribution(m, 0.7)
    assert np.allclose(d.probabilities, p, atol=1e-14)
    assert d.log_Z == pytest.approx(log_z, abs=1e-12)


def test_enumeration_is_stable_at_large_beta():
    m = random_model(20, 2, scale_h=1.0, scale_J=1.0)
    d = enumerate_distribution(m, 10.0)
    assert np.all(np.isfinite(d.probabilities))
    assert abs(d.probabilities.sum() - 1) <= 1e-12


def test_enumeration_cap():
    with pytest.raises(ModelSizeError):
        enumerate_distribution(IsingModel.zeros(25))
    with pytest.raises(ModelSizeError):
        enumerate_distribution(IsingModel.zeros(6), cap=5)


def test_uniform_moments_are_zero():
    m = IsingModel.zeros(4, [(0, 1), (1, 2)])
    mv = exact_moments(enumerate_distribution(m), m)
    assert np.allclose(mv.means, 0, atol=1e-15) and np.allclose(mv.correlations, 0, atol=1e-15)


def test_strong_coupling_correlation():
    m = IsingModel.from_couplings([0, 0], {(0, 1): 10.0})
    mv = exact_moments(enumerate_distribution(m), m)
    assert mv.correlations[0] == pytest.approx(1.0, abs=1e-6)


def test_single_spin_mean_is_tanh():
    m = IsingModel([1.0])
    mv = exact_moments(enumerate_distribution(m), m)
    assert mv.means[0] == pytest.approx(math.tanh(1.0), abs=1e-12)
    assert mv.means[0] == pytest.approx(0.761594, abs=1e-6)


def test_moments_match_brute_force():
    m = random_model(6, 11, edges=[(0, 1), (2, 5), (3, 4), (1, 5)])
    means, corr = brute_moments(m.h, m.couplings(), 1.3)
    mv = exact_moments(enumerate_distribution(m, 1.3), m)
    assert np.allclose(mv.means, means, atol=1e-12)
    assert np.allclose(mv.correlations, [corr[tuple(e)] for e in m.edges.tolist()], atol=1e-12)


def test_moments_model_mismatch():
    with pytest.raises(ValueError):
        exact_moments(enumerate_distribution(IsingModel.zeros(3)), IsingModel.zeros(4))


def test_condition_matches_slice_of_joint():
    m = random_model(5, 4)
    clamps = {1: -1, 3: 1}
    reduced, free = condition(m, clamps)
    joint = enumerate_distribution(m).probabilities
    S = all_configs(5)
    keep = (S[:, 1] == -1) & (S[:, 3] == 1)
    cond = joint[keep] / joint[keep].sum()
    sub = enumerate_distribution(reduced).probabilities
    # both are ordered by the free spins' index bits
    order = spins_to_index(S[keep][:, free])
    assert np.allclose(sub[order], cond, atol=1e-13)


def test_binary_conversion_zero_model():
    spin, offset = binary_to_spin(BinaryModel(np.zeros(3)))
    assert np.all(spin.h == 0) and spin.num_edges == 0 and offset == 0


def test_binary_conversion_distribution_equality():
    b = BinaryModel([0.0, 0.0], [(0, 1)], [4.0])
    spin, offset = binary_to_spin(b)
    p_spin = enumerate_distribution(spin).probabilities
    U = (all_configs(2) + 1) // 2
    w = np.exp(-b.energy(U))
    assert np.max(np.abs(p_spin - w / w.sum())) <= 1e-12
    assert np.allclose(b.energy(U), energy(spin, all_configs(2)) + offset, atol=1e-12)


def test_binary_round_trip():
    rng = np.random.default_rng(8)
    b = BinaryModel(rng.normal(size=4), [(0, 1), (1, 3), (0, 2)], rng.normal(size=3))
    spin, off1 = binary_to_spin(b)
    back, off2 = spin_to_binary(spin)
    assert np.allclose(back.a, b.a, atol=1e-12) and np.allclose(back.W, b.W, atol=1e-12)
    assert off1 == pytest.approx(off2, abs=1e-12)
