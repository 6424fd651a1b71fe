import math

import numpy as np
import pytest
from scipy import stats

from conftest import const_env
from rwrelab.env_core import Environment, couple_P_Q, sample_env_P, sample_env_Q
from rwrelab.errors import WindowUnderflowError
from rwrelab.ladder import ladder_locations
from rwrelab.quenched import hitting_time_moments, quenched_mean_T
from rwrelab.stat_tests import geometric_gof_test
from rwrelab.walk import (annealed_hitting_times, annealed_hitting_times_fast, coupled_pair_run, coupled_pairs,
                          coupling_variance_check, excursion_decomposition, excursion_decomposition_sample,
                          hitting_times, hitting_times_fast, move_log, positions, run_to_hit,
                          success_probability)


def test_deterministic_march():
    env = const_env(1.0 - 1e-12, -5, 40)
    ps = run_to_hit(env, 30, 1, checkpoints=[0, 5, 17, 30])
    assert ps.T == 30 and ps.L == 0
    assert np.array_equal(ps.xstar, [0, 5, 17, 30])


def test_event_identity_every_path(ref075):
    env = sample_env_P(ref075, -600, 300, 2)
    for pid in range(300):
        ps = run_to_hit(env, 200, 3, pid, checkpoints=[10, 100, 1000, 5000, 20_000])
        assert ps.event_identity_holds()
        assert ps.T >= 200 and ps.L >= 0
        assert np.all(np.diff(ps.xstar) >= 0)


def test_mean_T50_within_one_percent(ref15):
    env = sample_env_P(ref15, -500, 60, 3)
    T, _, _ = hitting_times(env, 50, 100_000, 4)
    assert abs(T.mean() / quenched_mean_T(env, 50) - 1) < 0.01


def test_window_underflow():
    env = const_env(0.2, -10, 20)
    with pytest.raises(WindowUnderflowError):
        run_to_hit(Environment(np.concatenate([np.full(11, 0.2), np.full(20, 0.6)]), -10), 10, 0)
    with pytest.raises(WindowUnderflowError):
        hitting_times(env, 10, 10, 0)


def test_branching_sampler_matches_paths(ref075):
    env = sample_env_Q(ref075, -600, 120, 5)
    a = hitting_times_fast(env, 100, 20_000, 6)
    b, _, _ = hitting_times(env, 100, 20_000, 7)
    assert stats.ks_2samp(a, b).pvalue > 0.01
    mom = hitting_time_moments(env, 100, 500, 2)
    se = math.sqrt(mom[2] - mom[1] ** 2) / math.sqrt(a.size)
    assert abs(a.mean() - mom[1]) < 4 * se


def test_annealed_branching_matches_paths(ref15):
    a = annealed_hitting_times_fast(ref15, 200, 20_000, 8)
    b = annealed_hitting_times(ref15, 200, 20_000, 9)
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_positions_consistent_with_hits():
    env = const_env(0.75, -300, 2000)
    X, XS = positions(env, [100, 1000], 5000, 10)
    assert np.all(XS >= X) and np.all(XS[:, 1] >= XS[:, 0])
    assert abs(X[:, 1].mean() / 1000 - 0.5) < 0.02


def test_coupled_identical_envs(ref075):
    env = sample_env_P(ref075, -400, 120, 11)
    for pid in range(50):
        a, b = coupled_pair_run(env, env, 100, 12, pid)
        assert (a.T, a.L, a.min_position) == (b.T, b.L, b.min_position)


def test_coupled_pairs_identity(ref075):
    env = sample_env_P(ref075, -400, 120, 13)
    envq = couple_P_Q(env, 14)
    out = coupled_pairs(env, envq, 100, 10_000, 15)
    T, L, T2, L2 = out.T
    assert np.array_equal(np.abs(T - T2), np.abs(L - L2))


def test_coupled_move_logs_agree_on_nonnegative_visits(ref075):
    env = sample_env_P(ref075, -400, 60, 16)
    envq = couple_P_Q(env, 17)
    for pid in range(30):
        seqs = []
        for e in (env, envq):
            moves = move_log(e, 50, 18, pid)
            pos = np.concatenate([[0], np.cumsum(moves)[:-1]])
            seqs.append({x: moves[pos == x] for x in range(0, 50)})
        for x in range(50):
            k = min(seqs[0][x].size, seqs[1][x].size)
            assert np.array_equal(seqs[0][x][:k], seqs[1][x][:k])


def test_coupled_difference_has_no_trend(ref075):
    env = sample_env_P(ref075, -600, 220, 19)
    envq = couple_P_Q(env, 20)
    means = []
    for n in (50, 100, 200):
        out = coupled_pairs(env, envq, n, 10_000, 21)
        means.append(np.mean(np.abs(out[:, 0] - out[:, 2])))
    # the difference comes from time spent left of 0, which does not grow with n
    assert means[2] < 1.5 * means[0] + 1.0


def test_coupled_pairs_need_matching_right_half(ref075):
    env = sample_env_P(ref075, -50, 60, 1)
    other = sample_env_P(ref075, -50, 60, 2)
    with pytest.raises(ValueError):
        coupled_pairs(env, other, 50, 10, 0)


def test_single_site_block_p():
    env = const_env(0.99, -20, 20)
    assert success_probability(env, 0, 1) == pytest.approx(0.99)
    ex = excursion_decomposition(env, 0, 1, 20_000, 1)
    assert ex.p == pytest.approx(0.99)
    assert np.all(ex.T >= 1)
    p0 = np.mean(ex.N == 0)
    assert abs(p0 - 0.99) < 3 * math.sqrt(0.99 * 0.01 / ex.N.size)


def _block(env, k=3):
    lb = ladder_locations(env, 40)
    lens = lb.lengths
    i = int(np.argmax(lens >= k))
    return int(lb.locations[i]), int(lb.locations[i + 1])


def test_excursion_N_is_geometric(ref075):
    env = sample_env_Q(ref075, -400, 2000, 22)
    lo, hi = _block(env)
    ex = excursion_decomposition(env, lo, hi, 10_000, 23)
    assert geometric_gof_test(ex.N, ex.p).passed


def test_excursion_matches_direct_simulation(ref075):
    env = sample_env_Q(ref075, -400, 2000, 24)
    lo, hi = _block(env)
    ex = excursion_decomposition(env, lo, hi, 10_000, 25)
    shifted = Environment(env.omega, env.left - lo, env.dist)
    T, _, _ = hitting_times(shifted, hi - lo, 10_000, 26)
    assert stats.ks_2samp(ex.T, T).pvalue > 0.01


def test_single_excursion_draw(ref075):
    env = sample_env_Q(ref075, -400, 2000, 27)
    lo, hi = _block(env)
    for d in range(20):
        dr = excursion_decomposition_sample(env, lo, hi, 28, d)
        assert dr.N == math.floor(dr.c * dr.tau) and 0 < dr.p <= 1
        assert dr.T == dr.S + dr.F.sum()


def test_variance_check_single_site():
    rep = coupling_variance_check(const_env(0.9, -200, 5), 0, 1, 20_000, 3)
    assert rep["pass"] and rep["lhs"] < rep["rhs"]


def test_variance_check_degenerate():
    # T is almost surely 1 and beta tau has variance beta^2, so the bound is tight
    rep = coupling_variance_check(const_env(0.999, -50, 5), 0, 1, 20_000, 4)
    assert rep["pass"]
    assert rep["lhs"] == pytest.approx(rep["beta"] ** 2, rel=0.05)
    assert rep["rhs"] == pytest.approx(rep["E_S"] ** 2 + rep["E_F"] ** 2 / 3, rel=0.05)


def test_variance_check_random_blocks(ref075):
    for s in range(5):
        env = sample_env_Q(ref075, -400, 2000, 100 + s)
        lo, hi = _block(env, 1)
        assert coupling_variance_check(env, lo, hi, 20_000, s)["pass"]


def test_paths_are_reproducible(ref075):
    env = sample_env_P(ref075, -300, 60, 30)
    a = hitting_times(env, 50, 1000, 31)[0]
    assert np.array_equal(a, hitting_times(env, 50, 1000, 31)[0])
    assert not np.array_equal(a, hitting_times(env, 50, 1000, 32)[0])
