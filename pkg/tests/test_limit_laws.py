import math

import numpy as np
import pytest
from scipy import special, stats

from rwrelab.errors import UnsupportedKappaError
from rwrelab.limit_laws import (H, HBAR, HEPS, annealed_draws, averaged_limit_sampler, centering, draw,
                                draw_array, draw_many, levy_half_cdf, make_sampler, sigma_bar_sampler,
                                sigma_sampler, stability_convolution_check, stable_cdf, tail_prob)
from rwrelab.point_process import FinitePointProcess, sample_poisson_Nlk, sum_squares
from rwrelab.stat_tests import ks_distance, prohorov_coupling_bound


def pp_of(*atoms):
    return FinitePointProcess(np.array(atoms, dtype=float))


def test_single_atom_hbar():
    x = draw_array(make_sampler(pp_of(1.0), HBAR), 100_000, 1)
    se = 1 / math.sqrt(x.size)
    assert abs(x.mean()) < 3 * se
    assert abs(x.var() - 1) < 3 * math.sqrt(8 / x.size)
    assert stats.kstest(x + 1, "expon").pvalue > 0.01


def test_single_atom_h():
    x = draw_array(make_sampler(pp_of(1.0), H), 20_000, 2)
    assert stats.kstest(x, "expon").pvalue > 0.01


def test_many_small_atoms_normal():
    k = 400
    x = draw_array(make_sampler(FinitePointProcess(np.full(k, k ** -0.5)), HBAR), 10_000, 3)
    assert stats.kstest(x, "norm").pvalue > 0.01


def test_variance_identity():
    pp = sample_poisson_Nlk(1.0, 0.75, 0.05, 4)
    pp = FinitePointProcess(pp.atoms)  # drop the floor so the identity is exact
    ms = make_sampler(pp, HBAR, shift=0.3)
    x = draw_array(ms, 100_000, 5)
    s2 = sum_squares(pp)
    s4 = float(np.sum(pp.atoms ** 4))
    # Var of the sample variance for sum x_i (tau_i - 1): fourth central moment 6 s4 + 3 s2^2
    assert abs(x.var() - s2) < 3 * math.sqrt((6 * s4 + 3 * s2 ** 2 - s2 ** 2) / x.size)
    assert abs(x.mean() - 0.3) < 3 * math.sqrt(s2 / x.size)
    assert ms.mean() == 0.3 and ms.variance() == pytest.approx(s2)


def test_heps_above_max_atom():
    ms = make_sampler(pp_of(2.0, 1.0), HEPS, eps=5.0, shift=-1.5)
    assert np.all(draw_array(ms, 100, 6) == -1.5)


def test_h_mean_two_atoms():
    x = draw_array(make_sampler(pp_of(2.0, 0.5), H), 100_000, 7)
    assert abs(x.mean() - 2.5) < 3 * math.sqrt(4.25 / x.size)


def test_draw_helpers():
    ms = make_sampler(pp_of(1.0, 0.5), HBAR)
    assert draw(ms, 8, 3) == draw(ms, 8, 3)
    ed = draw_many(ms, 1000, 8)
    assert ed.size == 1000
    p, se = tail_prob(ms, 0.0, 20_000, 9)
    assert 0 < p < 1 and se > 0


def test_make_sampler_mode_error():
    with pytest.raises(ValueError):
        make_sampler(pp_of(1.0), "nope")


def test_centering_examples():
    assert centering(1.5, 1.0, 0.1).value == pytest.approx(2 * math.sqrt(10), abs=1e-5)
    assert centering(1.0, 2.0, math.exp(-1)).value == pytest.approx(2.0)
    assert centering(1.0, 1.0, 1.0).value == 0.0
    assert centering(1.0, 1.0, 0.5, "c_tilde", nu_bar=2.0).value == pytest.approx(2 * math.log(2))
    with pytest.raises(UnsupportedKappaError):
        centering(0.5, 1.0, 0.1)


def test_sigma_bar_sampler():
    b = np.full(9, 3.0)
    ms = sigma_bar_sampler(b, 9, 1.0)
    assert ms.variance() == pytest.approx(1.0)
    x = draw_array(ms, 100_000, 10)
    assert abs(x.mean()) < 3 / math.sqrt(x.size)
    assert abs(x.var() - 1.0) < 0.03
    one = sigma_bar_sampler([3.0], 1, 1.0)
    assert np.allclose(one.atoms, [3.0])
    rng = np.random.default_rng(0)
    bb = rng.pareto(1.5, 200) + 1
    assert sigma_bar_sampler(bb, 200, 1.5).variance() == pytest.approx(200 ** (-2 / 1.5) * np.sum(bb ** 2))


def test_sigma_sampler():
    ms = sigma_sampler([1.0, 2.0], 2, 0.5)
    assert ms.mean() == pytest.approx(0.75)
    bb = np.random.default_rng(1).pareto(1.5, 500) + 1
    ms = sigma_sampler(bb, 500, 1.5, beta_bar=bb.mean())
    assert ms.mean() == pytest.approx(0.0, abs=1e-10)
    x = draw_array(ms, 100_000, 11)
    assert abs(x.mean()) < 3 * math.sqrt(ms.variance() / x.size)
    ms1 = sigma_sampler(bb, 500, 1.0, D_prime=bb.mean())
    assert ms1.mean() == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        sigma_sampler(bb, 500, 1.5)


def test_stable_cdf_levy_oracle():
    b = 2.0 / math.pi  # Levy scale 1
    med = 1.0 / (2 * special.erfcinv(0.5) ** 2)
    assert stable_cdf(0.5, b, med) == pytest.approx(0.5, abs=1e-5)
    xs = np.array([0.05, 0.3, 1.0, 4.0, 30.0])
    assert np.allclose(stable_cdf(0.5, b, xs), levy_half_cdf(b, xs), atol=1e-5)
    assert np.allclose(levy_half_cdf(b, xs), stats.levy.cdf(xs), atol=1e-12)


@pytest.mark.parametrize("kappa", [0.75, 1.0, 1.5])
def test_stable_cdf_monotone_and_limits(kappa):
    xs = np.linspace(-20, 40, 61)
    F = stable_cdf(kappa, 1.0, xs)
    assert np.all(np.diff(F) >= -1e-7)
    assert stable_cdf(kappa, 1.0, -1e4) < 1e-3 and stable_cdf(kappa, 1.0, 1e6) > 0.999
    # tail scale: 1 - L(x) ~ (b/x)^kappa
    x = 1e4
    assert (1 - stable_cdf(kappa, 1.0, x)) * x ** kappa == pytest.approx(1.0, rel=0.05)


def test_stable_cdf_scaling():
    for kappa in (0.75, 1.5):
        xs = np.array([-1.0, 0.5, 2.0, 7.0])
        assert np.allclose(stable_cdf(kappa, 3.0, xs), stable_cdf(kappa, 1.0, xs / 3.0), atol=1e-7)


def test_stable_cdf_matches_scipy():
    # scipy's S1 parameterization with the same characteristic-function scale
    from rwrelab.limit_laws import sigma_from_b

    for kappa in (0.75, 1.5):
        s = sigma_from_b(kappa, 1.0)
        xs = np.array([0.5, 1.0, 3.0])
        ref = stats.levy_stable.cdf(xs, kappa, 1.0, scale=s)
        assert np.allclose(stable_cdf(kappa, 1.0, xs), ref, atol=1e-4)


def test_annealed_h_is_stable():
    lam, kap = 1.0, 0.75
    x = annealed_draws(kap, lam, 10_000, 12)
    b = (lam * math.gamma(1 + kap) / kap) ** (1 / kap)
    assert ks_distance(x, lambda t: stable_cdf(kap, b, t)) < 1.63 / math.sqrt(x.size)


def test_stability_one_fold_and_examples():
    rep = stability_convolution_check(0.75, 1.0, 1, 5000, 13)
    assert 0 <= rep["p"] <= 1
    assert stability_convolution_check(0.75, 1.0, 4, 10_000, 14)["pass"]
    assert stability_convolution_check(1.0, 1.0, 2, 10_000, 15)["pass"]


def test_stability_kappa_one_needs_shift():
    _, a, b = stability_convolution_check(1.0, 1.0, 2, 10_000, 16, return_samples=True)
    # without the 2 log 2 shift the laws differ
    assert stats.ks_2samp(a, b - 2 * math.log(2)).pvalue < 0.01


def test_heps_converges():
    pp = FinitePointProcess(sample_poisson_Nlk(1.0, 0.75, 1e-3, 17).atoms)
    full = draw_array(make_sampler(pp, H), 20_000, 18)
    d = [ks_distance(draw_array(make_sampler(pp, HEPS, eps=e), 20_000, 19), full) for e in (0.4, 0.1, 0.01)]
    assert d[0] > d[1] > d[2]


def test_prohorov_chain_on_truncation():
    pp = FinitePointProcess(sample_poisson_Nlk(1.0, 1.5, 0.01, 20).atoms)
    rng = np.random.default_rng(21)
    tau = rng.exponential(size=(5000, len(pp)))
    x = (tau - 1) @ pp.atoms
    for eps in (0.5, 0.1):
        keep = pp.atoms > eps
        y = (tau[:, keep] - 1) @ pp.atoms[keep]
        bound, _ = prohorov_coupling_bound(x, y)
        assert ks_distance(x, y) <= bound


def test_averaged_limit_sampler():
    pp = sample_poisson_Nlk(1.0, 1.5, 0.01, 22)
    ms = averaged_limit_sampler(pp)
    assert ms.mode == H and ms.shift == pytest.approx(-centering(1.5, 1.0, 0.01).value)
    pp05 = sample_poisson_Nlk(1.0, 0.5, 0.01, 23)
    assert averaged_limit_sampler(pp05).shift == 0.0
