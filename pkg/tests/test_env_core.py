import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import const_env, rho_env
from rwrelab.env_core import (Environment, EnvDistribution, big_pi, log_big_pi, mean_ladder_length, r_sum, rho,
                              sample_env_P, sample_env_Q, solve_kappa, speed, three_atom_family, two_point,
                              w_inf, w_sum)
from rwrelab.errors import (AcceptanceTooLowError, EmptyRangeError, InsufficientWindowError, NoKappaError,
                            WindowError)

rhos = st.lists(st.floats(0.05, 4.0), min_size=2, max_size=40)


def naive_r(r, i, j):
    return sum(np.prod(r[i:k + 1]) for k in range(i, j + 1))


def naive_w(r, i, j):
    return sum(np.prod(r[k:j + 1]) for k in range(i, j + 1))


@pytest.mark.parametrize("omega, expected", [(2 / 3, 0.5), (0.5, 1.0), (0.25, 3.0)])
def test_rho_values(omega, expected):
    env = const_env(omega, -2, 2)
    assert rho(env, 1) == pytest.approx(expected, rel=1e-15)


def test_rho_out_of_window():
    with pytest.raises(WindowError):
        rho(const_env(0.6, 0, 5), 6)


def test_big_pi_constant_and_single():
    env = const_env(2 / 3, -5, 10)
    assert big_pi(env, 0, 2) == pytest.approx(1 / 8, rel=1e-14)
    assert big_pi(env, 3, 3) == pytest.approx(rho(env, 3), rel=1e-14)
    assert big_pi(env, 4, 3) == 1.0


def test_big_pi_vs_direct_product():
    rng = np.random.default_rng(0)
    r = rng.uniform(0.1, 3.0, 20)
    env = rho_env(r)
    for i in range(20):
        for j in range(i, 20):
            assert big_pi(env, i, j) == pytest.approx(np.prod(r[i:j + 1]), rel=1e-12)


def test_r_and_w_geometric():
    env = const_env(2 / 3, -50, 50)
    for m in (1, 5, 30):
        assert r_sum(env, 0, m - 1) == pytest.approx(1 - 2.0 ** -m, rel=1e-14)
        assert w_sum(env, 10 - m + 1, 10) == pytest.approx(1 - 2.0 ** -m, rel=1e-14)
    assert r_sum(env, 4, 4) == pytest.approx(0.5)
    assert w_sum(env, 4, 4) == pytest.approx(0.5)


def test_r_sum_empty_range():
    with pytest.raises(EmptyRangeError):
        r_sum(const_env(0.6, 0, 5), 3, 2)


@given(rhos)
def test_r_w_match_naive_sums(r):
    r = np.array(r)
    env = rho_env(r)
    n = r.size
    for i, j in [(0, n - 1), (1, n - 1), (0, n // 2)]:
        assert r_sum(env, i, j) == pytest.approx(naive_r(r, i, j), rel=1e-12)
        assert w_sum(env, i, j) == pytest.approx(naive_w(r, i, j), rel=1e-12)


@given(rhos)
def test_r_recursion_and_pi_multiplicative(r):
    env = rho_env(np.array(r))
    n = len(r)
    i, j, k = 0, n // 2, n - 1
    assert r_sum(env, i, k) == pytest.approx(r[i] * (1 + r_sum(env, i + 1, k)), rel=1e-12)
    assert big_pi(env, i, j) * big_pi(env, j + 1, k) == pytest.approx(big_pi(env, i, k), rel=1e-12)
    assert log_big_pi(env, i, k) == pytest.approx(math.fsum(np.log(r)), abs=1e-12)


def test_w_inf_constant():
    assert w_inf(const_env(2 / 3, -200, 0), 0, 1e-12) == pytest.approx(1.0, abs=1e-12)
    assert w_inf(const_env(0.75, -200, 0), 0, 1e-12) == pytest.approx(0.5, abs=1e-12)


def test_w_inf_depth_self_consistency(ref075):
    env = sample_env_P(ref075, -800, 10, 3)
    tol = 1e-10
    deep = w_inf(env, 5, tol)
    shallow = w_inf(env.restrict(-400, 10), 5, tol)
    assert abs(deep - shallow) < tol


def test_w_inf_window_too_shallow():
    with pytest.raises(InsufficientWindowError):
        w_inf(const_env(2 / 3, -5, 0), 0, 1e-10)


def test_solve_kappa_two_point():
    assert solve_kappa(two_point(0.75, 0.25, 0.75)).kappa == pytest.approx(1.0, abs=1e-10)
    q = (3 - math.sqrt(3)) / 2
    sol = solve_kappa(two_point(0.75, 0.25, q))
    assert sol.kappa == pytest.approx(0.5, abs=1e-10)
    assert sol.residual <= 1e-10
    assert sol.lattice


def test_solve_kappa_no_root():
    with pytest.raises(NoKappaError):
        solve_kappa(EnvDistribution("finite", (2 / 3,), (1.0,)))


@given(st.floats(0.55, 0.95), st.floats(0.05, 0.45), st.floats(0.3, 0.95))
def test_kappa_monotone_bracket(hi, lo, p):
    r_hi, r_lo = (1 - hi) / hi, (1 - lo) / lo
    if p * math.log(r_hi) + (1 - p) * math.log(r_lo) >= 0:
        return
    d_ = EnvDistribution("two-point", (hi, lo), (p, 1 - p))
    k = solve_kappa(d_).kappa
    assert d_.moment(k - 0.01) < 1 < d_.moment(k + 0.01)


def test_transience_checked():
    with pytest.raises(ValueError):
        EnvDistribution("two-point", (0.6, 0.3), (0.5, 0.5))


def test_reference_families(ref075, ref15):
    for d_, k in ((ref075, 0.75), (ref15, 1.5)):
        sol = solve_kappa(d_)
        assert sol.kappa == pytest.approx(k, abs=1e-10)
        assert not sol.lattice


def test_three_atom_family_unreachable():
    with pytest.raises(ValueError):
        three_atom_family((0.5, 0.9, 1.01), 0.2, 0.5)


def test_sample_env_P_contract(ref075):
    a = sample_env_P(ref075, -10, 1000, 7)
    b = sample_env_P(ref075, -10, 1000, 7)
    assert np.array_equal(a.omega, b.omega)
    assert set(np.unique(a.omega)) <= set(ref075.support)
    tp = two_point(0.8, 0.3, 0.7)
    assert set(np.unique(sample_env_P(tp, 0, 500, 1).omega)) <= set(tp.support)


def test_sample_env_P_mean_clt(ref075):
    env = sample_env_P(ref075, 0, 10 ** 6 - 1, 11)
    sd = math.sqrt(ref075.var_omega() / env.omega.size)
    assert abs(env.omega.mean() - ref075.mean_omega()) < 4 * sd


def test_sample_env_P_frequencies_for_many_seeds(ref15):
    # guards against degenerate generator states for any seed
    for seed in range(1000, 1020):
        env = sample_env_P(ref15, 0, 20_000, seed)
        freq = np.array([np.mean(env.omega == v) for v in ref15.support])
        assert np.all(np.abs(freq - np.array(ref15.weights)) < 0.02)


def test_sample_env_Q_property(ref075):
    for seed in range(20):
        env = sample_env_Q(ref075, -60, 10, seed)
        assert env.q_conditioned
        for i in range(-60, 0):
            assert big_pi(env, i, -1) < 1


def test_sample_env_Q_right_half_is_P(ref075):
    q0 = [sample_env_Q(ref075, -30, 2, s).omega_at(0) for s in range(10_000)]
    p0 = sample_env_P(ref075, 0, 9_999, 99).omega
    assert stats.ks_2samp(q0, p0, method="asymp").pvalue > 0.01


def test_sample_env_Q_budget(ref075):
    with pytest.raises(AcceptanceTooLowError):
        sample_env_Q(ref075, -500, 2, 0, max_attempts=1)
    # a modest budget is enough at a modest depth
    sample_env_Q(ref075, -30, 2, 0, max_attempts=10_000)


def test_env_io_roundtrip(tmp_path, ref075):
    env = sample_env_Q(ref075, -20, 20, 5)
    env.save_csv(tmp_path / "e.csv")
    env.save_npz(tmp_path / "e.npz")
    for back in (Environment.load_csv(tmp_path / "e.csv"), Environment.load_npz(tmp_path / "e.npz")):
        assert np.array_equal(back.omega, env.omega)
        assert back.left == env.left and back.q_conditioned and back.dist == ref075


def test_config_roundtrip(ref075):
    assert EnvDistribution.from_config(ref075.to_config()) == ref075
    assert EnvDistribution.from_config({"family": "reference", "kappa": 0.75}) == ref075


def test_mean_ladder_length_vs_simulation(ref075):
    # Spitzer series against the empirical block length
    from rwrelab.ladder import ladder_locations

    env = sample_env_P(ref075, 0, 400_000, 4)
    blocks = ladder_locations(env, 150_000)
    lens = blocks.lengths
    se = lens.std(ddof=1) / math.sqrt(lens.size)
    assert abs(lens.mean() - mean_ladder_length(ref075)) < 4 * se


def test_mean_ladder_length_all_down():
    d_ = EnvDistribution("finite", (0.8, 0.9), (0.5, 0.5))
    assert mean_ladder_length(d_) == pytest.approx(1.0)


def test_speed_formula_and_mc():
    from rwrelab.walk import positions

    d_ = EnvDistribution("finite", (2 / 3,), (1.0,))
    assert speed(d_) == pytest.approx(1 / 3)
    env = const_env(2 / 3, -200, 10_010)
    X, _ = positions(env, [10_000], 200, 1)
    assert abs(X.mean() / 10_000 - 1 / 3) < 0.02 / 3
