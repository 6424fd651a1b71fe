"""Closed-form quenched quantities for a fixed environment."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .env_core import Environment, big_pi, log_big_pi, r_sum, w_inf
from .errors import IllConditionedWarning, InsufficientWindowError, NumericalError, WindowError


@dataclass
class QuenchedMoments:
    """Per-site crossing moments ``m_x = E^x T_{x+1}`` and ``s_x = E^x T_{x+1}^2``."""

    sites: np.ndarray
    mean: np.ndarray
    second: np.ndarray
    boundary: int
    error: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return self.second - self.mean ** 2

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# boundary={self.boundary}\nsite,mean,second,error\n")
            for x, m, s2, e in zip(self.sites, self.mean, self.second, self.error):
                fh.write(f"{x},{float(m)!r},{float(s2)!r},{float(e)!r}\n")


@dataclass
class TrapStats:
    block: int
    M: float
    i0: int
    M_minus: float
    M_plus: float
    length: int

    CSV_FIELDS = ("block", "M", "i0", "M_minus", "M_plus", "length")

    def csv_row(self) -> str:
        return ",".join(repr(getattr(self, f)) for f in self.CSV_FIELDS)


def exit_prob(env: Environment, i: int, x: int, j: int, side: str = "right") -> float:
    """``P^x(T_j < T_i)`` (side ``"right"``) or ``P^x(T_i < T_j)`` (``"left"``)."""
    if not i < x < j:
        raise WindowError(f"need i < x < j, got ({i}, {x}, {j})")
    env.index(i), env.index(j)
    denom = r_sum(env, i, j - 1)
    if side == "right":
        return r_sum(env, i, x - 1) / denom
    if side == "left":
        return big_pi(env, i, x - 1) * r_sum(env, x, j - 1) / denom
    raise ValueError("side must be 'left' or 'right'")


def crossing_mean(env: Environment, x: int, tol: float = 1e-10) -> float:
    """``E^x T_{x+1} = 1 + 2 W_x``."""
    return 1.0 + 2.0 * w_inf(env, x, tol)


@njit(cache=True)
def _w_run(rho, a, n, w_prev):
    """W_{a..a+n-1} by the forward recursion from W_{a-1} = w_prev."""
    out = np.empty(n)
    w = w_prev
    for k in range(n):
        w = rho[a + k] * (1.0 + w)
        out[k] = w
    return out


def _w_minus_one(env, tol):
    if env.left > -1:
        raise InsufficientWindowError("window has no sites left of 0")
    return w_inf(env, -1, tol)


def quenched_mean_T(env: Environment, n: int, tol: float = 1e-10, split: bool = False):
    """``E_omega T_n = n + 2 sum_{i=0}^{n-1} W_i``.

    With ``split=True`` returns ``(n + 2 sum W_{0,i}, 2 W_{-1} R_{0,n-1})``,
    the part depending on sites >= 0 only and the left-tail part.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    env.index(n - 1)
    w_left = _w_minus_one(env, tol)
    r0 = r_sum(env, 0, n - 1)
    if big_pi(env, env.left, -1) * (1.0 + r0) > tol:
        raise InsufficientWindowError("left truncation too shallow for this n")
    rho = env.rho_array
    w = _w_run(rho, env.offset, n, w_left)
    if not split:
        return float(n + 2.0 * math.fsum(w))
    w0 = _w_run(rho, env.offset, n, 0.0)
    return float(n + 2.0 * math.fsum(w0)), float(2.0 * w_left * r0)


@njit(cache=True)
def _moments_rec(omega, a, b):
    """Crossing moments for array indices a..b with a reflecting virtual site at a-1."""
    n = b - a + 1
    m = np.empty(n)
    s = np.empty(n)
    mp, sp = 1.0, 1.0
    minw = 1.0
    for k in range(n):
        w = omega[a + k]
        q = 1.0 - w
        minw = min(minw, w)
        mk = (1.0 + q * mp) / w
        sk = (1.0 + q * (sp + 2.0 * mp * mk + 2.0 * (mp + mk))) / w
        m[k] = mk
        s[k] = sk
        mp, sp = mk, sk
    return m, s, minw


def crossing_second_moments(env: Environment, lo: int, hi: int, boundary_depth: int) -> QuenchedMoments:
    """First and second moments of the one-step crossing times for sites in [lo, hi].

    The recursion starts ``boundary_depth`` sites left of ``lo`` with the site
    just beyond treated as reflecting; the reported error is the change
    against a start half as deep.
    """
    if boundary_depth < 2:
        raise ValueError("boundary_depth must be >= 2")
    start = lo - boundary_depth
    if start < env.left:
        raise InsufficientWindowError(f"need sites down to {start}, window starts at {env.left}")
    a, b = env.index(start), env.index(hi)
    m, s, minw = _moments_rec(env.omega, a, b)
    half = lo - boundary_depth // 2
    m2, s2, _ = _moments_rec(env.omega, env.index(half), b)
    k = lo - start
    k2 = lo - half
    if minw < 1e-6:
        warnings.warn(f"omega as small as {minw:.3g}: second moments lose precision",
                      IllConditionedWarning, stacklevel=2)
    err = np.abs(s[k:] - s2[k2:])
    return QuenchedMoments(np.arange(lo, hi + 1), m[k:], s[k:], start, err)


@njit(cache=True)
def _raw_moments_rec(omega, a, b, order):
    """Raw moments ``E tau^k`` (k = 0..order) of the crossing times at indices a..b.

    With ``tau = 1`` w.p. ``omega`` and ``tau = 1 + tau_left + tau'`` otherwise,
    the term in ``E tau^k`` itself is moved to the left-hand side.
    """
    n = b - a + 1
    out = np.empty((n, order + 1))
    prev = np.ones(order + 1)
    cur = np.empty(order + 1)
    fact = np.ones(order + 1)
    for k in range(1, order + 1):
        fact[k] = fact[k - 1] * k
    for i in range(n):
        w = omega[a + i]
        q = 1.0 - w
        cur[0] = 1.0
        for k in range(1, order + 1):
            acc = 0.0
            for c in range(k):
                for bb in range(k - c + 1):
                    aa = k - c - bb
                    acc += fact[k] / (fact[aa] * fact[bb] * fact[c]) * prev[bb] * cur[c]
            cur[k] = (w + q * acc) / w
        out[i] = cur
        prev[:] = cur
    return out


def crossing_moments(env: Environment, lo: int, hi: int, boundary_depth: int, order: int = 4) -> np.ndarray:
    """``(hi-lo+1, order+1)`` array of raw moments of ``T_{x+1}`` from x, for x in [lo, hi].

    Same reflecting boundary as :func:`crossing_second_moments`.
    """
    start = lo - boundary_depth
    if boundary_depth < 2 or start < env.left:
        raise InsufficientWindowError(f"need sites down to {start}, window starts at {env.left}")
    out = _raw_moments_rec(env.omega, env.index(start), env.index(hi), order)
    return out[lo - start:]


def sum_moments(site_moments) -> np.ndarray:
    """Raw moments of a sum of independent variables from their raw moments (rows)."""
    mom = np.asarray(site_moments, dtype=float)
    order = mom.shape[1] - 1
    total = np.zeros(order + 1)
    total[0] = 1.0
    binom = [[math.comb(k, j) for j in range(k + 1)] for k in range(order + 1)]
    for row in mom:
        total = np.array([sum(binom[k][j] * total[j] * row[k - j] for j in range(k + 1))
                          for k in range(order + 1)])
    return total


def hitting_time_moments(env: Environment, n: int, boundary_depth: int, order: int = 4) -> np.ndarray:
    """Raw moments ``E_omega T_n^k``, k = 0..order (crossing times are independent)."""
    return sum_moments(crossing_moments(env, 0, n - 1, boundary_depth, order))


def _h_values(env, lo, hi):
    """h(x) = P^x(T_hi < T_lo) for x in [lo, hi]."""
    rho = env.rho_array
    a = env.index(lo)
    n = hi - lo
    # partial sums R_{lo, x-1} for x = lo+1..hi
    pi = np.cumprod(rho[a:a + n])
    r = np.cumsum(pi)
    h = np.empty(n + 1)
    h[0] = 0.0
    h[1:] = r / r[-1]
    return h


def conditioned_crossing_mean(env: Environment, i: int, lo: int, hi: int) -> float:
    """``E^i[T_{i+1} | T_hi < T_lo]`` via the Doob h-transform on ``[lo, hi]``."""
    if not lo < i < hi:
        raise WindowError(f"need lo < i < hi, got ({lo}, {i}, {hi})")
    env.index(lo), env.index(hi)
    h = _h_values(env, lo, hi)
    if np.any(h[1:] <= 0):
        raise NumericalError("h vanished inside the interval")
    m = 0.0
    for x in range(lo + 1, i + 1):
        w = env.omega_at(x)
        up = w * h[x + 1 - lo]
        down = (1.0 - w) * h[x - 1 - lo]
        w_hat = up / (up + down)
        # crossing-mean recursion m_x = 1/w + rho m_{x-1}; rho_hat = 0 at lo+1
        m = 1.0 / w_hat + (down / up) * m
    return float(m)


def _trap_core(logs):
    """M, i0, M-, M+ from log rho over one block (index 0 = block start)."""
    nu = logs.size
    cum = np.concatenate(([0.0], np.cumsum(logs)))  # cum[j+1] = log Pi_{0,j}
    part = cum[1:]
    m = part.max()
    i0 = int(np.flatnonzero(part == m)[-1]) + 1
    # min over 0 < a <= b < i0 of cum[b+1] - cum[a]
    lo_min = 0.0
    if i0 >= 2:
        seg = cum[1:i0 + 1]
        run_max = np.maximum.accumulate(seg[:-1])
        lo_min = min(0.0, float(np.min(seg[1:] - run_max)))
    hi_max = 0.0
    if nu - i0 >= 2:
        seg = cum[i0 + 1:nu + 1]
        run_min = np.minimum.accumulate(seg[:-1])
        hi_max = max(0.0, float(np.max(seg[1:] - run_min)))
    return math.exp(m), i0, math.exp(lo_min), math.exp(hi_max)


def trap_stats(env: Environment, lo: int, hi: int, block: int = 1) -> TrapStats:
    """Trap statistics of the block ``[lo, hi)`` between consecutive ladder points."""
    if hi <= lo:
        raise WindowError("block must have positive length")
    a, b = env.index(lo), env.index(hi - 1)
    M, i0, mm, mp = _trap_core(env.log_rho[a:b + 1])
    return TrapStats(block, M, i0, mm, mp, hi - lo)


def conditioned_mean_bound(stats: TrapStats) -> float:
    """Upper bound ``3 nu^3 M+ / (M-)^3`` on the conditioned crossing means of a block."""
    return 3.0 * stats.length ** 3 * stats.M_plus / stats.M_minus ** 3


__all__ = [
    "QuenchedMoments", "TrapStats", "exit_prob", "crossing_mean", "quenched_mean_T",
    "crossing_second_moments", "conditioned_crossing_mean", "trap_stats", "conditioned_mean_bound",
    "log_big_pi",
]
