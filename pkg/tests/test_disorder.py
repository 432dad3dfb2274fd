import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctpolymer.disorder import (direct_local_time_mgf, gamma_of_beta, local_time_mgf,
                                martingale_trajectories, quenched_second_moment_ratio,
                                return_probability, second_moment_curve, second_moment_ratio)
from ctpolymer.exceptions import DomainError
from ctpolymer.gibbs import ModelParams


def test_gamma_values():
    assert gamma_of_beta(3, 0.0) == 0.0
    assert math.isclose(gamma_of_beta(3, 1.0), math.log(12 / 11))
    assert gamma_of_beta(1, 1.999) > gamma_of_beta(1, 1.99) > 4
    with pytest.raises(DomainError):
        gamma_of_beta(1, 2.0)
    assert gamma_of_beta(2, 1e-4) < 1e-8


def test_ratio_beta_zero_and_short_horizon():
    assert second_moment_ratio(ModelParams(2, 0.0, 3.0)) == (1.0, 0.0)
    r, se = second_moment_ratio(ModelParams(1, 1.0, 0.01), 20000)
    assert 1.0 <= r <= math.exp(0.01)


def test_ratio_curve_nondecreasing_and_plateau():
    rows = second_moment_curve(3, 0.5, [2, 4, 8, 16], 50000, seed=1)
    vals = [r[1] for r in rows]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    inc = np.diff(vals)
    assert inc[-1] < inc[0]
    bound = local_time_mgf(3, gamma_of_beta(3, 0.5), 0.3405).mgf_value
    assert vals[-1] <= bound + 3 * rows[-1][2]


def test_quenched_route_agrees():
    params = ModelParams(1, 0.5, 1.0)
    a, sa = second_moment_ratio(params, 100000, seed=2)
    b, sb = quenched_second_moment_ratio(params, 400, 200, seed=3)
    assert abs(a - b) < 3 * math.hypot(sa, sb)


def test_mgf_closed_form():
    assert local_time_mgf(3, 0.0, 0.4).mgf_value == 1.0
    assert math.isclose(local_time_mgf(3, 0.3, 0.0).mgf_value, math.exp(0.3))
    edge = local_time_mgf(3, math.log(2), 0.5)
    assert edge.diverged and math.isinf(edge.mgf_value)
    assert not local_time_mgf(3, math.log(2) - 1e-9, 0.5).diverged
    with pytest.raises(DomainError):
        local_time_mgf(3, 0.1, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0, 0.6), st.floats(0, 0.6))
def test_mgf_monotone(g1, g2, q1, q2):
    g1, g2 = sorted((g1, g2))
    q1, q2 = sorted((q1, q2))
    a = local_time_mgf(3, g1, q1)
    b = local_time_mgf(3, g2, q2)
    assert a.diverged == (q1 * math.exp(g1) >= 1)
    if not b.diverged:
        assert b.mgf_value >= a.mgf_value


def test_return_probability_high_dimension():
    rs = return_probability(50, 256, 20000, seed=1)
    assert rs.q_hat < 0.02
    assert not rs.flagged


def test_return_probability_recurrent_trend():
    rs = return_probability(1, 2048, 20000, seed=2)
    assert rs.flagged
    assert rs.q_hat >= rs.q_half > 0.95


def test_return_probability_workers_invariant():
    a = return_probability(3, 128, 3000, seed=4, chunk=1000)
    b = return_probability(3, 128, 3000, seed=4, chunk=1000, workers=2)
    assert a.q_hat == b.q_hat and np.array_equal(a.visits, b.visits)


def test_direct_mgf_matches_geometric():
    rs = return_probability(3, 1024, 30000, seed=5)
    g = gamma_of_beta(3, 1.0)
    lt = local_time_mgf(3, g, rs.q_hat, rs.se)
    direct, se = direct_local_time_mgf(rs, g)
    assert abs(lt.mgf_value - direct) < 3 * math.hypot(lt.mgf_se, se)


def test_trajectories_beta_zero():
    rep = martingale_trajectories(1, 0.0, [1, 2, 4], n_env=4, n_ratio_samples=0)
    assert np.all(rep.trajectories == 0.0)
    assert rep.verdict == "stable"


def test_trajectories_decaying_d1():
    rep = martingale_trajectories(1, 1.0, [4, 8, 16, 32], n_env=32, dt=0.1,
                                  n_ratio_samples=1000, seed=1)
    assert rep.verdict == "decaying"
    assert rep.stats["slope_upper"] < -rep.stats["theta"]
    assert rep.trajectories.shape == (32, 4)


def test_trajectories_sampling_method_flags():
    rep = martingale_trajectories(1, 3.0, [1, 4], n_env=4, n_paths=50, method="sampling",
                                  n_ratio_samples=0, seed=2)
    assert rep.stats["n_excluded"] >= 1
    assert rep.verdict in ("decaying", "stable", "inconclusive")
    with pytest.raises(DomainError):
        martingale_trajectories(1, 1.0, [2, 1], n_env=4)


def test_replica_slopes_match_polyfit_and_skip_nan():
    from ctpolymer.disorder import _replica_slopes
    rng = np.random.default_rng(3)
    t = np.array([4.0, 8.0, 16.0, 32.0])
    L = rng.normal(size=(6, 4)) + np.outer(rng.normal(size=6), t)
    L[1, 2] = np.nan
    L[2, [0, 1, 3]] = np.nan
    got = _replica_slopes(t, L)
    for i in (0, 1, 3, 4, 5):
        ok = np.isfinite(L[i])
        assert math.isclose(got[i], np.polyfit(t[ok], L[i, ok], 1)[0], rel_tol=1e-10)
    assert np.isnan(got[2])
