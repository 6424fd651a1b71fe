import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import const_env, rho_env
from rwrelab.env_core import mean_ladder_length, sample_env_Q, solve_kappa
from rwrelab.errors import InsufficientWindowError
from rwrelab.ladder import (beta_sequence, centering_sequences, default_k, estimate_tail,
                            estimate_tail_for, hill, ladder_locations, load_betas_csv, sample_q_betas,
                            save_betas_csv)
from rwrelab.quenched import quenched_mean_T
from rwrelab.walk import hitting_times


def test_every_site_ladder_when_rho_below_one():
    env = rho_env(np.full(30, 0.7))
    assert np.array_equal(ladder_locations(env, 10).locations, np.arange(11))


def test_hand_scan():
    env = rho_env([2.0, 0.4, 0.5, 0.5, 0.5])
    lb = ladder_locations(env, 2)
    assert lb.locations[1] == 2 and lb.locations[2] == 3


def test_window_exhausted():
    env = rho_env([2.0, 2.0, 2.0, 0.1])
    with pytest.raises(InsufficientWindowError) as e:
        ladder_locations(env, 3)
    assert e.value.found == 1


def test_ladder_property_on_random_env(ref075):
    env = sample_env_Q(ref075, -300, 50_000, 1)
    lb = ladder_locations(env, 2000)
    assert lb.check_ladder_property(env)
    assert np.all(lb.lengths >= 1)


def test_nu_tail_geometric(ref075):
    _, lengths = sample_q_betas(ref075, 100_000, 1, 2, with_lengths=True)
    nu = lengths[:, 0]
    ks = np.arange(1, 30)
    surv = np.array([np.mean(nu >= k) for k in ks])
    good = surv * nu.size >= 50
    slope = np.polyfit(ks[good], np.log(surv[good]), 1)[0]
    assert slope < -0.05


def test_beta_constant():
    env = const_env(2 / 3, -400, 50)
    lb = beta_sequence(ladder_locations(env, 20), env)
    assert np.allclose(lb.betas, 3.0, atol=1e-9)


def test_beta_telescoping(ref075):
    env = sample_env_Q(ref075, -800, 5000, 3)
    lb = beta_sequence(ladder_locations(env, 50), env, with_traps=True)
    assert math.fsum(lb.betas) == pytest.approx(quenched_mean_T(env, int(lb.locations[-1])), rel=1e-10)
    assert np.all(lb.betas >= lb.lengths)
    assert len(lb.traps) == 50


def test_beta_one_vs_paths(ref075):
    for s in range(10):
        env = sample_env_Q(ref075, -600, 3000, 40 + s)
        lb = beta_sequence(ladder_locations(env, 1), env)
        nu = int(lb.locations[1])
        T, _, _ = hitting_times(env, nu, 100_000, 50 + s)
        from rwrelab.quenched import hitting_time_moments

        m = hitting_time_moments(env, nu, 400, 2)
        se = math.sqrt(m[2] - m[1] ** 2) / math.sqrt(T.size)
        assert abs(T.mean() - lb.betas[0]) < 4 * se


def test_q_betas_stationary(ref075):
    b = sample_q_betas(ref075, 20_000, 5, 4)
    assert stats.ks_2samp(b[:, 0], b[:, 4]).pvalue > 0.01


def test_q_betas_match_direct(ref075):
    b = sample_q_betas(ref075, 2000, 3, 5)
    direct = []
    for s in range(300):
        env = sample_env_Q(ref075, -800, 2000, 1000 + s)
        direct.append(beta_sequence(ladder_locations(env, 1), env).betas[0])
    assert stats.ks_2samp(b[:, 0], direct).pvalue > 0.01


def test_nu_bar_vs_spitzer(ref15):
    _, lengths = sample_q_betas(ref15, 50_000, 1, 6, with_lengths=True)
    nu = lengths[:, 0]
    assert abs(nu.mean() - mean_ladder_length(ref15)) < 4 * nu.std() / math.sqrt(nu.size)


def test_hill_synthetic_pareto():
    x = 2.0 ** (1 / 0.75) * (np.random.default_rng(7).pareto(0.75, 100_000) + 1)
    te = estimate_tail(x, n_boot=50)
    assert abs(te.kappa_hat - 0.75) < 0.05
    assert te.k == default_k(100_000) == math.ceil(100_000 ** 0.6)
    assert te.lam_hat == pytest.approx(te.kappa_hat * te.C_hat)
    assert abs(te.C_hat / 2.0 - 1) < 0.3


def test_hill_scale_equivariance():
    x = np.random.default_rng(8).pareto(0.75, 20_000) + 1
    k1, t1, c1 = hill(x)
    k2, t2, c2 = hill(10 * x)
    assert k2 == pytest.approx(k1, rel=1e-10)
    assert c2 == pytest.approx(c1 * 10 ** k1, rel=1e-10)


def test_hill_errors():
    with pytest.raises(ValueError):
        estimate_tail(np.ones(30))
    with pytest.raises(ValueError):
        hill(np.ones(100), 10)


def test_reference_family_tail(ref075):
    te = estimate_tail_for(ref075, 100_000, 9, n_boot=20)
    assert abs(te.kappa_hat - solve_kappa(ref075).kappa) < 0.15


def test_centering_examples():
    c = centering_sequences(np.full(100, 4.0), 1.5, 10)
    assert c.D_second == 4.0 and c.D_prime == 4.0
    m = math.floor(10 / 1.5)
    assert c.D == pytest.approx(m / 10 * 4.0)


def test_centering_pareto_kappa_one():
    # Pareto(1, C=1): E[X 1{X <= n}] = log n
    x = 1.0 / np.random.default_rng(10).uniform(size=2_000_000)
    n = 10 ** 6
    c = centering_sequences(x, 2.0, n)
    assert abs(c.D_second / math.log(n) - 1) < 0.1
    m = math.floor(n / 2.0)
    dpm = np.mean(np.where(x <= 2.0 * m, x, 0.0))
    assert c.D == pytest.approx(m / n * dpm, rel=1e-12)


def test_betas_csv(tmp_path, ref075):
    b = sample_q_betas(ref075, 50, 2, 11)
    save_betas_csv(tmp_path / "b.csv", b, {"kappa": 0.75, "seed": 11})
    vals, meta = load_betas_csv(tmp_path / "b.csv")
    assert np.array_equal(vals, b.ravel()) and meta["seed"] == 11


@given(st.lists(st.floats(0.1, 5.0), min_size=20, max_size=60))
def test_ladder_property_random_rho(r):
    r = list(r) + [0.01] * 200
    env = rho_env(r)
    lb = ladder_locations(env, 5)
    assert lb.check_ladder_property(env)
