import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctpolymer.exceptions import DomainError, SizeError
from ctpolymer.fieldopt import (MONITORING_SHORTFALL, ConstraintSpec, GridEnvironment, TimeGrid,
                                brute_force_sup, check_admissible, default_jump_budget,
                                dp_sup_field, estimate_C0, estimate_F, estimate_F_rho,
                                estimate_upsilon, grid_path_value, shell_order, tube_extrema)


def genv_for(K, d, R, seed, t=1.0):
    return GridEnvironment.sample(TimeGrid(t, K), R, d, seed)


def test_time_grid():
    g = TimeGrid(3.0, 12)
    assert math.isclose(g.dt * g.K, 3.0)
    with pytest.raises(DomainError):
        TimeGrid(1.0, 0)


def test_shell_order_prefix():
    small = shell_order(1, 2)
    big = shell_order(3, 2)
    assert np.array_equal(big[:len(small)], small)
    assert len(big) == 49


def test_increment_variance():
    g = genv_for(200, 1, 50, 3, t=10.0)
    v = g.increments.var()
    se = math.sqrt(2 / g.increments.size) * g.grid.dt
    assert abs(v - g.grid.dt) < 4 * se


def test_zero_budget_is_origin_walk():
    g = genv_for(10, 2, 1, 0)
    res = dp_sup_field(g, ConstraintSpec(0))
    origin = int(g.index(np.zeros(2, dtype=int))[0])
    acc = 0.0
    for v in g.increments[::-1, origin]:
        acc = v + acc
    assert res.value == acc
    assert res.jumps_used == 0 and not res.moves.any()


def test_zero_field_prefers_no_jumps():
    g = GridEnvironment.zeros(TimeGrid(1.0, 6), 3, 2)
    res = dp_sup_field(g, ConstraintSpec(3))
    assert res.value == 0.0 and res.jumps_used == 0


def test_fixed_small_instance_matches_brute():
    g = genv_for(4, 1, 2, 2024)
    c = ConstraintSpec(2)
    a, b = dp_sup_field(g, c), brute_force_sup(g, c)
    assert a.value == b.value and np.array_equal(a.moves, b.moves)


def test_one_step_by_hand():
    g = GridEnvironment(TimeGrid(1.0, 1), 1, 1, np.array([[0.3, -0.1, 0.5]]))
    # sites in shell order: 0, -1, 1
    res = brute_force_sup(g, ConstraintSpec(1))
    assert res.value == 0.5 and res.moves.tolist() == [1]
    assert brute_force_sup(g, ConstraintSpec(0)).value == -0.1
    assert dp_sup_field(g, ConstraintSpec(1)).value == 0.5


def test_separation_collapse():
    K = 5
    g = genv_for(K, 1, 3, 9)
    c = ConstraintSpec(3, K + 1, 0)
    res = brute_force_sup(g, c)
    assert res.jumps_used <= 1
    # admissible sequences: no jump, or exactly one jump at any of the K boundaries
    n_ok = sum(check_admissible(m, c, K) for m in _all_moves(K, 1))
    assert n_ok == 1 + 2 * K
    assert dp_sup_field(g, c).value == res.value


def _all_moves(K, d):
    base = 2 * d + 1
    for i in range(base ** K):
        m = []
        for _ in range(K):
            m.append(i % base)
            i //= base
        yield np.array(m[::-1])


@settings(max_examples=120, deadline=None)
@given(st.integers(1, 2), st.integers(1, 8), st.integers(0, 3), st.integers(0, 3),
       st.integers(0, 2), st.integers(0, 2**32), st.booleans())
def test_dp_equals_brute_force(d, K, J, sep, buf, seed, rounded):
    if d == 2:
        K = min(K, 6)
    g = genv_for(K, d, max(J, 1), seed)
    if rounded:
        g = GridEnvironment(g.grid, g.R, d, np.round(g.increments * 2) / 2, seed)
    c = ConstraintSpec(J, sep, buf)
    a, b = dp_sup_field(g, c), brute_force_sup(g, c)
    assert a.value == b.value
    assert np.array_equal(a.moves, b.moves)
    assert a.jumps_used == b.jumps_used == dp_sup_field(g, c, return_path=False).jumps_used
    assert check_admissible(a.moves, c, K)
    assert grid_path_value(g, a.sites) == a.value


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 4), st.integers(0, 3))
def test_monotone_in_budget_and_separation(seed, J, sep):
    g = genv_for(24, 1, 5, seed)
    v = dp_sup_field(g, ConstraintSpec(J, sep, sep), return_path=False).value
    assert dp_sup_field(g, ConstraintSpec(J + 1, sep, sep), return_path=False).value >= v
    assert dp_sup_field(g, ConstraintSpec(J, sep + 1, sep + 1), return_path=False).value <= v


def test_guards():
    g = genv_for(4, 1, 1, 0)
    with pytest.raises(DomainError):
        dp_sup_field(g, ConstraintSpec(2))
    with pytest.raises(SizeError) as info:
        dp_sup_field(genv_for(50, 1, 5, 0), ConstraintSpec(5), state_cap=100)
    assert info.value.required == 50 * 11 * 6
    with pytest.raises(SizeError):
        brute_force_sup(genv_for(12, 2, 1, 0), ConstraintSpec(1))


def test_brownian_scaling_exact_per_environment():
    # sup over T_r at horizon t equals sqrt(c) times sup over T_{r/c} at horizon c t
    c, t, K = 4.0, 2.0, 16
    for seed in range(10):
        g = genv_for(K, 1, 4, seed, t=t)
        big = g.scaled(math.sqrt(c), c * t)
        a = dp_sup_field(g, ConstraintSpec(4), return_path=False).value
        b = dp_sup_field(big, ConstraintSpec(4), return_path=False).value
        assert math.isclose(b, math.sqrt(c) * a, rel_tol=1e-12)


def test_estimate_F_zero_budget_trend():
    tab = estimate_F(0.01, [4, 16, 64], K_per_unit_time=2, n_env=64, seed=1)
    assert all(row.max_jumps == 0 for row in tab.rows)
    for row in tab.rows:
        assert abs(row.F_grid) < 3 * row.se_grid
    assert tab.rows[-1].se_grid < tab.rows[0].se_grid


def test_envelope_ratio_bounded():
    tab = estimate_F(1.0, [4, 8, 16, 32], n_env=16, seed=2)
    ratios = [row.envelope_ratio for row in tab.rows]
    assert max(ratios) < 3.0 and min(ratios) > 0.5


def test_rho_zero_identical_and_inclusion():
    a = estimate_F(1.0, [8], n_env=8, seed=4)
    b = estimate_F_rho(1.0, 0.0, [8], n_env=8, seed=4)
    assert a.sups == b.sups and a.F == b.F
    c = estimate_F_rho(1.0, 0.2, [8], n_env=8, seed=4)
    assert all(x <= y for x, y in zip(c.sups[0], a.sups[0]))


def test_grid_refinement_corrected():
    tabs = {K: estimate_F(1.0, [16], K_per_unit_time=K, n_env=32, seed=5) for K in (4, 8, 16)}
    f8, f16 = tabs[8], tabs[16]
    assert abs(f16.F - f8.F) < 3 * math.hypot(f8.se, f16.se)
    # the raw grid maximum keeps drifting upward with refinement
    assert tabs[16].rows[0].F_grid > tabs[4].rows[0].F_grid


def test_monitoring_constant():
    from scipy.special import zeta
    assert math.isclose(MONITORING_SHORTFALL, -zeta(0.5) / math.sqrt(2 * math.pi), rel_tol=1e-14)


def test_tube_extrema_brackets_base():
    g = genv_for(64, 1, 4, 3, t=4.0)
    res = dp_sup_field(g, ConstraintSpec(4))
    ks = res.jump_steps
    seq = np.vstack([np.zeros((1, 1), dtype=int), res.sites[ks]])
    lo, hi = tube_extrema(g, ks, seq, 3)
    assert lo <= res.value <= hi + 1e-12
    # the maximizer is also the max of its own tube
    assert math.isclose(hi, res.value, abs_tol=1e-12)
    lo0, hi0 = tube_extrema(g, ks, seq, 0)
    assert math.isclose(lo0, res.value) and math.isclose(hi0, res.value)


def test_upsilon_trivial_and_nonnegative():
    rows = estimate_upsilon(1.0, [0.01, 0.5], [4], n_env=4, n_bases=3, seed=0)
    assert rows[0][2] == 0.0
    assert all(r[2] >= 0 for r in rows)


def test_C0_arithmetic():
    assert estimate_C0(2.0, 0.0) == (0.5, 0.0)
    c, se = estimate_C0(1.0, 0.1)
    assert math.isclose(c, 0.125) and math.isclose(se, 0.025)
    with pytest.raises(DomainError):
        estimate_C0(0.0, 0.1)


def test_default_jump_budget():
    assert default_jump_budget(math.e, 0.5, 1.0) == 1
    assert default_jump_budget(10.0, 0.5, 2.0) == 9
    betas = np.linspace(math.e, 40, 200)
    b = [default_jump_budget(x, 0.5, 10.0) for x in betas]
    assert all(y >= x for x, y in zip(b, b[1:]))
    with pytest.raises(DomainError):
        default_jump_budget(1.0, 0.5, 1.0)
