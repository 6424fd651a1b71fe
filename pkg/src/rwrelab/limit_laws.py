"""Random probability measures built from point processes, and stable laws.

A *realization* is a fixed set of atoms; a *draw* adds fresh i.i.d. Exp(1)
weights.  Atoms below ``lump_below`` (and, for Poisson samples, the points
below the truncation floor) are represented by a Gaussian with the exact
conditional mean and variance of their contribution.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy import integrate, special

from .errors import NumericalError, UnsupportedKappaError
from .point_process import FinitePointProcess, extract_Nn
from .rng import kernel_key, next_exponential, next_normal, task_state
from .stat_tests import EmpiricalDistribution, ks_two_sample_test

HBAR, H, HEPS = "Hbar", "H", "Heps"
_MODES = (HBAR, H, HEPS)


@dataclass
class MeasureSampler:
    """Draws ``shift + lump + sum_i x_i (tau_i - 1)`` (Hbar) or ``... x_i tau_i`` (H, Heps)."""

    atoms: np.ndarray
    mode: str
    eps: float = 0.0
    shift: float = 0.0
    lump_mean: float = 0.0
    lump_var: float = 0.0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        self.atoms = np.ascontiguousarray(self.atoms, dtype=float)

    @property
    def centered(self) -> bool:
        return self.mode == HBAR

    def mean(self) -> float:
        """Conditional mean given the realization."""
        base = 0.0 if self.centered else float(math.fsum(self.atoms))
        return self.shift + self.lump_mean + base

    def variance(self) -> float:
        return float(math.fsum(self.atoms ** 2)) + self.lump_var


def make_sampler(pp: FinitePointProcess, mode: str, eps: float = 0.0, shift: float = 0.0,
                 lump_below: float | None = None) -> MeasureSampler:
    """Sampler for ``Hbar(pp)``, ``H(pp)`` or ``H_eps(pp)`` shifted by ``shift``.

    For Poisson samples the discarded points below the floor enter through
    their compensated Gaussian (``floor_residual`` plus a draw-level
    variance) and, in H mode with kappa < 1, their mean.  For kappa >= 1 the
    H-mode floor is compensated, so callers add ``-c(eps_min)`` as shift.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    a = pp.atoms
    if mode == HEPS:
        return MeasureSampler(a[a > eps], mode, eps, shift)
    big, small = (a, a[:0]) if lump_below is None else (a[a >= lump_below], a[a < lump_below])
    var = float(math.fsum(small ** 2)) + (pp.floor_var if pp.is_poisson else 0.0)
    mean = 0.0
    if mode == H:
        mean = float(math.fsum(small))
        if pp.is_poisson:
            mean += pp.floor_mean + pp.floor_residual
    return MeasureSampler(big, mode, eps, shift, mean, var)


@njit(cache=True, parallel=True)
def _draw_kernel(atoms, centered, lump_mean, lump_sd, shift, key, first, m):
    out = np.empty(m)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first + p)
        s = 0.0
        for i in range(atoms.size):
            t = next_exponential(st)
            s += atoms[i] * (t - 1.0 if centered else t)
        if lump_sd > 0.0:
            s += lump_sd * next_normal(st)
        out[p] = shift + lump_mean + s
    return out


@njit(cache=True, parallel=True)
def _tail_kernel(atoms, centered, lump_mean, lump_sd, shift, x, key, first, m):
    """Rao-Blackwellised indicator of ``draw > x``: the Gaussian part is integrated out."""
    out = np.empty(m)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first + p)
        s = shift + lump_mean
        for i in range(atoms.size):
            t = next_exponential(st)
            s += atoms[i] * (t - 1.0 if centered else t)
        if lump_sd > 0.0:
            out[p] = 0.5 * math.erfc((x - s) / (lump_sd * math.sqrt(2.0)))
        else:
            out[p] = 1.0 if s > x else 0.0
    return out


def draw_many(ms: MeasureSampler, m: int, seed: int, stream="draws") -> EmpiricalDistribution:
    return EmpiricalDistribution(draw_array(ms, m, seed, stream))


def draw_array(ms: MeasureSampler, m: int, seed: int, stream="draws") -> np.ndarray:
    return _draw_kernel(ms.atoms, ms.centered, ms.lump_mean, math.sqrt(ms.lump_var), ms.shift,
                        kernel_key(seed, stream), 0, m)


def draw(ms: MeasureSampler, seed: int, draw_id: int = 0, stream="draws") -> float:
    return float(_draw_kernel(ms.atoms, ms.centered, ms.lump_mean, math.sqrt(ms.lump_var), ms.shift,
                              kernel_key(seed, stream), draw_id, 1)[0])


def tail_prob(ms: MeasureSampler, x: float, m: int, seed: int, stream="tail"):
    """``(P(draw > x), standard error)`` by inner Monte Carlo."""
    v = _tail_kernel(ms.atoms, ms.centered, ms.lump_mean, math.sqrt(ms.lump_var), ms.shift, x,
                     kernel_key(seed, stream), 0, m)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(m))


# --- centering ----------------------------------------------------------------
@dataclass(frozen=True)
class CenteringConstants:
    kappa: float
    lam: float
    eps: float
    value: float
    variant: str = "c"


def centering(kappa: float, lam: float, eps: float, variant: str = "c", nu_bar: float | None = None):
    """``c = lam log(1/eps)`` (kappa = 1) or ``lam/(kappa-1) eps^(1-kappa)`` (1 < kappa < 2);
    ``variant="c_tilde"`` adds ``lam log nu_bar``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if kappa == 1.0:
        val = lam * math.log(1.0 / eps)
    elif 1.0 < kappa < 2.0:
        val = lam / (kappa - 1.0) * eps ** (1.0 - kappa)
    else:
        raise UnsupportedKappaError(f"no centering needed or defined for kappa = {kappa}")
    if variant == "c_tilde":
        if nu_bar is None:
            raise ValueError("c_tilde needs nu_bar")
        val += lam * math.log(nu_bar)
    elif variant != "c":
        raise ValueError("variant must be 'c' or 'c_tilde'")
    return CenteringConstants(kappa, lam, eps, val, variant)


def averaged_limit_sampler(pp: FinitePointProcess, lump_below: float | None = None) -> MeasureSampler:
    """Averaged-centering limit measure for a Poisson realization:
    ``H`` for kappa < 1, ``lim H_eps * delta_{-c(eps)}`` for 1 <= kappa < 2."""
    k = pp.kappa
    if k < 1:
        return make_sampler(pp, H, lump_below=lump_below)
    c = centering(k, pp.lam, pp.eps_min).value
    return make_sampler(pp, H, shift=-c, lump_below=lump_below)


# --- walk-side measures ---------------------------------------------------------
def sigma_bar_sampler(betas, n: int, kappa: float, lump_below: float | None = None) -> MeasureSampler:
    """Law of ``n^(-1/kappa) sum_{i<=n} beta_i (tau_i - 1)``."""
    b = np.asarray(getattr(betas, "betas", betas), dtype=float)[:n]
    return make_sampler(extract_Nn(b, n, kappa), HBAR, lump_below=lump_below)


def sigma_sampler(betas, n: int, kappa: float, D_prime: float | None = None, beta_bar: float | None = None,
                  lump_below: float | None = None) -> MeasureSampler:
    """Law of ``n^(-1/kappa) (sum beta_i tau_i - centering)``.

    kappa < 1: no centering; kappa = 1: ``n D'(n)``; 1 < kappa < 2: ``n beta_bar``.
    """
    b = np.asarray(getattr(betas, "betas", betas), dtype=float)[:n]
    scale = n ** (1.0 / kappa)
    if kappa < 1:
        shift = 0.0
    elif kappa == 1:
        if D_prime is None:
            raise ValueError("kappa = 1 needs D'(n)")
        shift = -n * D_prime / scale
    elif kappa < 2:
        if beta_bar is None:
            raise ValueError("1 < kappa < 2 needs beta_bar")
        shift = -n * beta_bar / scale
    else:
        raise UnsupportedKappaError("kappa must be below 2")
    return make_sampler(extract_Nn(b, n, kappa), H, shift=shift, lump_below=lump_below)


# --- stable laws -------------------------------------------------------------------
def tail_constant_factor(kappa: float) -> float:
    """``C_kappa`` with ``P(X > x) ~ C_kappa sigma^kappa x^(-kappa)`` for a totally
    skewed stable law of scale ``sigma``."""
    if kappa == 1.0:
        return 2.0 / math.pi
    return (1.0 - kappa) / (special.gamma(2.0 - kappa) * math.cos(math.pi * kappa / 2.0))


def sigma_from_b(kappa: float, b: float) -> float:
    """Characteristic-function scale of ``L_{kappa,b}``, whose tail is ``(b/x)^kappa``."""
    return b * tail_constant_factor(kappa) ** (-1.0 / kappa)


def stable_cdf(kappa: float, b: float, x, tol: float = 1e-9):
    """CDF of the totally right-skewed stable law ``L_{kappa,b}`` with zero shift.

    ``b`` is the tail scale: ``1 - L(x) ~ (b/x)^kappa``.  Evaluated by
    Gil-Pelaez inversion of the characteristic function.
    """
    if not 0 < kappa < 2:
        raise UnsupportedKappaError("kappa must lie in (0, 2)")
    if b <= 0:
        raise ValueError("b must be positive")
    sig = sigma_from_b(kappa, b)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array([_gil_pelaez(kappa, xi / sig, tol) for xi in xs])
    return out if np.ndim(x) else float(out[0])


def _gil_pelaez(a: float, y: float, tol: float) -> float:
    """Standard-scale CDF at ``y``."""
    if math.isinf(y):
        return 1.0 if y > 0 else 0.0
    if a < 1 and y <= 0:
        return 0.0
    upper = (-math.log(tol * 1e-3)) ** (1.0 / a)
    if a == 1.0:
        def phase(u):
            return -(2.0 / math.pi) * u * math.log(u) if u > 0 else 0.0
    else:
        t = math.tan(math.pi * a / 2.0)

        def phase(u):
            return u ** a * t

    # sin(phase - u y) = sin(phase) cos(u y) - cos(phase) sin(u y)
    def f_cos(u):
        return math.exp(-u ** a) * math.sin(phase(u)) / u if u > 0 else 0.0

    def f_sin(u):
        return math.exp(-u ** a) * math.cos(phase(u)) / u if u > 0 else 0.0

    def f_full(u):
        return math.exp(-u ** a) * math.sin(phase(u) - u * y) / u if u > 0 else -y

    total = 0.0
    abserr = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        # near zero the integrand is smooth apart from a u^(a-1) singularity
        head = min(1.0, upper, math.pi / max(abs(y), 1e-300))
        r, e = integrate.quad(f_full, 0.0, head, epsabs=tol, epsrel=tol, limit=500)
        total += r
        abserr += e
        if abs(y) < 1.0:
            r, e = integrate.quad(f_full, head, upper, epsabs=tol, epsrel=tol, limit=2000)
            total += r
            abserr += e
        else:
            for f, w, sgn in ((f_cos, "cos", 1.0), (f_sin, "sin", -1.0)):
                r, e = integrate.quad(f, head, upper, weight=w, wvar=y, epsabs=tol, epsrel=tol, limit=2000)
                total += sgn * r
                abserr += e
    if abserr > 1e-6 * math.pi:
        raise NumericalError(f"stable CDF quadrature error {abserr:.2g} at y = {y}, kappa = {a}")
    return min(1.0, max(0.0, 0.5 - total / math.pi))


def levy_half_cdf(b: float, x):
    """Closed-form ``L_{1/2,b}``: the Levy law of scale ``pi b / 2``."""
    s = math.pi * b / 2.0
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, special.erfc(np.sqrt(s / (2.0 * np.maximum(x, 1e-300)))), 0.0)


# --- stability of the limit measures ----------------------------------------------
def floor_for(lam: float, kappa: float, n_points: float) -> float:
    """Truncation floor giving ``n_points`` expected Poisson points."""
    return (lam / (kappa * n_points)) ** (1.0 / kappa)


@njit(cache=True)
def _lepage_one(st, lam, kappa, eps, centered, comp, floor_mean, floor_sd):
    """One draw from a fresh realization (annealed sampling)."""
    g_max = (lam / kappa) * eps ** (-kappa)
    scale = (lam / kappa) ** (1.0 / kappa)
    g = next_exponential(st)
    s = 0.0
    while g <= g_max:
        t = next_exponential(st)
        x = scale * g ** (-1.0 / kappa)
        s += x * (t - 1.0 if centered else t)
        g += next_exponential(st)
    return s - comp + floor_mean + floor_sd * next_normal(st)


@njit(cache=True, parallel=True)
def lepage_kernel(lam, kappa, eps, centered, comp, floor_mean, floor_sd, n_sum, scale, add, key, first, m):
    """``scale * sum_{j<n_sum} Y_j + add`` with independent realizations per ``Y_j``."""
    out = np.empty(m)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first + p)
        s = 0.0
        for _ in range(n_sum):
            s += _lepage_one(st, lam, kappa, eps, centered, comp, floor_mean, floor_sd)
        out[p] = scale * s + add
    return out


def _annealed_params(kappa, lam, eps, mode):
    v = lam * eps ** (2.0 - kappa) / (2.0 - kappa)
    if mode == HBAR:
        return True, 0.0, 0.0, math.sqrt(v)
    if kappa < 1:
        # floor mean plus realization- and draw-level fluctuations
        return False, 0.0, lam * eps ** (1.0 - kappa) / (1.0 - kappa), math.sqrt(2.0 * v)
    return False, centering(kappa, lam, eps).value, 0.0, math.sqrt(2.0 * v)


def annealed_draws(kappa: float, lam: float, m: int, seed: int, mode: str = "limit", n_points: float = 2000.0,
                   n_sum: int = 1, scale: float = 1.0, add: float = 0.0, stream="lepage") -> np.ndarray:
    """Draws of one-draw-per-realization limit laws (``mode`` ``"limit"`` or ``"Hbar"``)."""
    eps = floor_for(lam, kappa, n_points)
    centered, comp, fmean, fsd = _annealed_params(kappa, lam, eps, HBAR if mode == HBAR else H)
    return lepage_kernel(lam, kappa, eps, centered, comp, fmean, fsd, n_sum, scale, add,
                         kernel_key(seed, stream), 0, m)


def stability_convolution_check(kappa: float, lam: float, n_fold: int, m_samples: int, seed: int,
                                mode: str = "limit", n_points: float = 2000.0, alpha: float = 0.01,
                                return_samples: bool = False):
    """Two-sample KS between ``Y_1 + ... + Y_n`` (independent realizations) and
    ``n^(1/kappa) Y`` (plus ``lam n log n`` when kappa = 1 outside Hbar mode).

    Returns the report dict, or ``(report, sums, scaled)`` with ``return_samples``.
    """
    if not 0 < kappa < 2:
        raise UnsupportedKappaError("kappa must lie in (0, 2)")
    a = annealed_draws(kappa, lam, m_samples, seed, mode, n_points, n_sum=n_fold, stream=("stab-sum", kappa, n_fold))
    add = lam * n_fold * math.log(n_fold) if (kappa == 1.0 and mode != HBAR) else 0.0
    b = annealed_draws(kappa, lam, m_samples, seed, mode, n_points, n_sum=1,
                       scale=n_fold ** (1.0 / kappa), add=add, stream=("stab-scaled", kappa, n_fold))
    rep = ks_two_sample_test(a, b, alpha, name=f"stability k={kappa} n={n_fold}", seed=seed).to_dict()
    rep.update({"kappa": kappa, "lam": lam, "n_fold": n_fold, "mode": mode})
    return (rep, a, b) if return_samples else rep
