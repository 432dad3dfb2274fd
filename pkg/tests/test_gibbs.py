import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctpolymer.env import EnvironmentSheet
from ctpolymer.exceptions import DomainError, SizeError
from ctpolymer.gibbs import (ModelParams, _occupancy_integrals, estimate_partition,
                             estimate_partition_series, field_distance_sq, free_energy_point,
                             gibbs_average, hamiltonian, hamiltonians, martingale_value,
                             transfer_log_partition)
from ctpolymer.seeding import make_rng
from ctpolymer.walk import JumpPath, PathEnsemble, intersection_time, sample_paths


def test_params_validation():
    with pytest.raises(DomainError):
        ModelParams(0, 1.0, 1.0)
    with pytest.raises(DomainError):
        ModelParams(1, -1.0, 1.0)
    with pytest.raises(DomainError):
        ModelParams(1, 1.0, -1.0)


def test_hamiltonian_no_jump_path_is_site_value():
    sheet = EnvironmentSheet(2, 3)
    p = JumpPath(1.7, [], [[0, 0]])
    assert hamiltonian(sheet, p) == sheet.value_at((0, 0), 1.7)


def test_hamiltonian_sums_increments():
    sheet = EnvironmentSheet(1, 4)
    p = JumpPath(2.0, [0.5, 1.2], [[0], [1], [0]])
    h = hamiltonian(sheet, p)
    ref = (sheet.increment(0, 0.0, 0.5) + sheet.increment(1, 0.5, 1.2)
           + sheet.increment(0, 1.2, 2.0))
    assert math.isclose(h, ref, abs_tol=1e-12)
    with pytest.raises(DomainError):
        hamiltonian(sheet, p, horizon=3.0)


def test_batched_equals_single(rng):
    sheet = EnvironmentSheet(2, 8)
    ens = sample_paths(rng, 2, 1.5, 40)
    hs = hamiltonians(sheet, ens)
    for p, h in zip(ens, hs):
        assert math.isclose(hamiltonian(sheet, p), h, abs_tol=1e-12)


def test_hamiltonian_variance_is_t():
    p = JumpPath(2.0, [0.4, 1.1, 1.5], [[0], [1], [2], [1]])
    h = np.array([hamiltonian(EnvironmentSheet(1, s), p) for s in range(10000)])
    sq = h ** 2
    assert abs(sq.mean() - 2.0) < 3 * sq.std() / 100


def test_field_distance_saturating_pair():
    p = JumpPath(1.0, [0.5], [[0], [1]])
    q = JumpPath(1.0, [0.6], [[0], [1]])
    assert math.isclose(field_distance_sq(p, q), 0.2, abs_tol=1e-12)
    assert field_distance_sq(p, p) == 0.0


jump_sets = st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5).map(sorted)


@settings(max_examples=100, deadline=None)
@given(jump_sets, st.lists(st.floats(-0.2, 0.2), min_size=5, max_size=5), st.integers(0, 10**6))
def test_field_distance_bound_shared_positions(s, shift, seed):
    n = len(s)
    s2 = np.clip(np.array(s) + np.array(shift[:n]), 0.0, 1.0)
    s2.sort()
    codes = np.random.default_rng(seed).choice([-1, 1], size=n)
    x = np.r_[0, np.cumsum(codes)].reshape(-1, 1)
    p, q = JumpPath(1.0, s, x), JumpPath(1.0, s2, x)
    assert field_distance_sq(p, q) <= 2 * np.abs(np.array(s) - s2).sum() + 1e-12


def test_partition_beta_zero():
    sheet = EnvironmentSheet(1, 0)
    est = estimate_partition(sheet, ModelParams(1, 0.0, 3.0), 10, make_rng(0))
    assert est.log_Z == 0.0 and est.std_error == 0.0
    assert free_energy_point(ModelParams(2, 0.0, 1.0), 3, 10).p_hat == 0.0


def test_partition_degenerate_weights_flagged():
    sheet = EnvironmentSheet(1, 0)
    est = estimate_partition(sheet, ModelParams(1, 30.0, 8.0), 50, make_rng(1))
    assert math.isfinite(est.log_Z)
    assert est.low_confidence and est.ess < 10


def test_series_beta_zero_telescopes():
    sheet = EnvironmentSheet(1, 0)
    est = estimate_partition_series(sheet, ModelParams(1, 0.0, 0.5), 12, 4, make_rng(0))
    assert abs(est.log_Z) < 1e-9
    assert est.truncation_bound < 1e-8 and not est.truncated
    short = estimate_partition_series(sheet, ModelParams(1, 0.0, 3.0), 3, 4, make_rng(0))
    assert short.truncated
    assert math.isclose(math.exp(short.log_Z), 1 - short.truncation_bound, rel_tol=1e-12)


def test_series_zero_term_exact():
    sheet = EnvironmentSheet(2, 5)
    t, beta = 0.8, 1.3
    est = estimate_partition_series(sheet, ModelParams(2, beta, t), 0, 4, make_rng(0))
    frozen = EnvironmentSheet.restore(sheet.snapshot())
    ref = -4 * t + beta * frozen.value_at((0, 0), t)
    assert math.isclose(est.log_Z, ref, abs_tol=1e-12)


def test_series_size_guard():
    with pytest.raises(SizeError):
        estimate_partition_series(EnvironmentSheet(3, 0), ModelParams(3, 1.0, 0.1), 8, 4,
                                  make_rng(0))


def test_series_matches_sampling_one_sheet():
    sheet = EnvironmentSheet(1, 21)
    params = ModelParams(1, 1.0, 0.5)
    a = estimate_partition(sheet, params, 20000, make_rng(1))
    b = estimate_partition_series(sheet, params, 12, 8, make_rng(2))
    assert abs(a.log_Z - b.log_Z) < 3 * math.hypot(a.std_error, b.std_error)


def test_free_energy_jensen_and_monotone():
    lo = free_energy_point(ModelParams(1, 1.0, 2.0), 32, seed=3, method="transfer", dt=0.02)
    hi = free_energy_point(ModelParams(1, 1.0, 8.0), 32, seed=3, method="transfer", dt=0.02)
    for fe in (lo, hi):
        assert fe.p_hat <= 0.5 + 3 * fe.std_error
    assert hi.p_hat >= lo.p_hat - 3 * math.hypot(lo.std_error, hi.std_error)


def test_free_energy_methods_agree():
    params = ModelParams(1, 0.7, 2.0)
    a = free_energy_point(params, 48, 4000, seed=5, method="sampling")
    b = free_energy_point(params, 48, seed=6, method="transfer", dt=0.01)
    assert abs(a.p_hat - b.p_hat) < 3 * math.hypot(a.std_error, b.std_error)
    with pytest.raises(DomainError):
        free_energy_point(params, 4, method="nope")


def test_martingale_value():
    assert martingale_value(0.0, ModelParams(1, 0.0, 5.0)) == (1.0, 0.0)
    assert martingale_value(0.0, ModelParams(3, 2.0, 0.0)) == (1.0, 0.0)
    m, lm = martingale_value(1.0, ModelParams(1, 2.0, 1.0))
    assert math.isclose(lm, -1.0) and math.isclose(m, math.exp(-1.0))


def test_martingale_mean_one_d3():
    params = ModelParams(3, 0.5, 2.0)
    m = []
    for s in range(1000):
        est = estimate_partition(EnvironmentSheet(3, s), params, 100, make_rng(s, 1))
        m.append(martingale_value(est.log_Z, params)[0])
    m = np.array(m)
    assert abs(m.mean() - 1) < 3 * m.std(ddof=1) / math.sqrt(m.size)


def test_transfer_annealed_mean():
    # E exp(beta inc) = exp(beta^2 dt / 2) per cell: E M = kept mass
    vals = []
    for s in range(400):
        r = transfer_log_partition(1, 0.8, [1.0], 0.05, s)
        vals.append(math.exp(r.log_Z[0] - 0.32))
    vals = np.array(vals)
    assert abs(vals.mean() - math.exp(r.log_leak)) < 3 * vals.std() / 20
    assert r.log_leak > -1e-8


def test_transfer_nested_horizons_are_prefixes():
    a = transfer_log_partition(2, 1.0, [0.5, 1.0, 2.0], 0.1, 9, box_radius=8)
    b = transfer_log_partition(2, 1.0, [1.0], 0.1, 9, box_radius=8)
    assert a.log_Z[1] == b.log_Z[0]
    with pytest.raises(DomainError):
        transfer_log_partition(1, 1.0, [0.55], 0.1, 0)


def test_gibbs_jump_count_beta_zero():
    sheet = EnvironmentSheet(1, 0)
    g = gibbs_average(sheet, ModelParams(1, 0.0, 2.0), "jump_count", 20000, make_rng(0))
    assert abs(g.value - 4.0) < 3 * g.std_error
    assert math.isclose(g.effective_sample_size, 20000)


def test_gibbs_overlap_in_unit_interval():
    for beta in (0.0, 1.0, 3.0):
        sheet = EnvironmentSheet(2, 1)
        g = gibbs_average(sheet, ModelParams(2, beta, 1.0), "replica_overlap", 200, make_rng(2))
        assert 0.0 <= g.value <= 1.0


def test_overlap_integrals_match_pairwise(rng):
    a = sample_paths(rng, 1, 1.0, 30)
    b = sample_paths(rng, 1, 1.0, 25)
    wa = rng.random(30)
    wa /= wa.sum()
    wb = rng.random(25)
    wb /= wb.sum()
    g = _occupancy_integrals(a, wa, b, wb)
    ref = np.array([sum(wb[j] * intersection_time(p, q) for j, q in enumerate(b)) for p in a])
    assert np.allclose(g, ref, atol=1e-12)


def test_jump_count_increases_with_beta():
    params0, params2 = ModelParams(1, 0.0, 4.0), ModelParams(1, 2.0, 4.0)
    v0, v2 = [], []
    for s in range(32):
        g0 = gibbs_average(EnvironmentSheet(1, s), params0, "jump_count", 20000, make_rng(s))
        g2 = gibbs_average(EnvironmentSheet(1, s), params2, "jump_count", 20000, make_rng(s))
        v0.append(g0.value)
        v2.append(g2.value)
    v0, v2 = np.array(v0), np.array(v2)
    diff = v2 - v0
    assert diff.mean() > 3 * diff.std(ddof=1) / math.sqrt(diff.size)


def test_gibbs_average_tag_check():
    with pytest.raises(DomainError):
        gibbs_average(EnvironmentSheet(1, 0), ModelParams(1, 1.0, 1.0), "energy", 100,
                      make_rng(0))
    with pytest.raises(DomainError):
        gibbs_average(EnvironmentSheet(1, 0), ModelParams(1, 1.0, 1.0), "jump_count", 5,
                      make_rng(0))
