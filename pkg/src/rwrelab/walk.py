"""Path-level simulation of the walk in a fixed environment window.

A walk that touches the left end of its window raises
:class:`WindowUnderflowError`; it is never reflected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .env_core import Environment, draw_omega, r_sum
from .errors import RejectionBudgetError, WindowError, WindowUnderflowError
from .rng import hash_uniform, kernel_key, next_exponential, next_negbin, next_uniform, state_array, task_state

OK, UNDERFLOW, OVERFLOW, BUDGET = 0, -1, -2, -3
DEFAULT_MAX_STEPS = 10 ** 12


@dataclass
class PathSummary:
    target: int
    T: int
    L: int
    min_position: int
    checkpoints: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    xstar: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    hit_times: np.ndarray | None = None

    def event_identity_holds(self) -> bool:
        """``{X*_t >= x} == {T_x <= t}`` at every checkpoint and every 0 <= x <= target."""
        if self.hit_times is None:
            raise ValueError("hit times were not recorded")
        xs = np.arange(self.target + 1)
        for t, xst in zip(self.checkpoints, self.xstar):
            if not np.array_equal(xst >= xs, self.hit_times <= t):
                return False
        return True

    CSV_FIELDS = ("target", "T", "L", "min_position")

    def csv_row(self) -> str:
        return ",".join(str(getattr(self, f)) for f in self.CSV_FIELDS)


@dataclass
class ExcursionDraw:
    p: float
    c: float
    tau: float
    N: int
    S: int
    F: np.ndarray
    T: int

    def __post_init__(self):
        assert self.T == self.S + int(np.sum(self.F))
        assert self.N == len(self.F)


def _raise_status(status, what="walk"):
    if status == UNDERFLOW:
        raise WindowUnderflowError(f"{what} reached the left end of the window")
    if status == OVERFLOW:
        raise WindowError(f"{what} reached the right end of the window")
    if status == BUDGET:
        raise RuntimeError(f"{what} exceeded its step budget")


# --- kernels -------------------------------------------------------------
@njit(cache=True)
def _walk_hit(omega, off, target, state, cps, cp_out, hits, max_steps):
    x = 0
    t = 0
    xstar = 0
    L = 0
    minpos = 0
    c = 0
    ncp = cps.size
    if hits.size > 0:
        hits[0] = 0
    while c < ncp and cps[c] <= 0:
        cp_out[c] = 0
        c += 1
    while x < target:
        if x + off <= 0:
            return t, L, minpos, UNDERFLOW
        if next_uniform(state) < omega[x + off]:
            x += 1
        else:
            x -= 1
        t += 1
        if x < 0:
            L += 1
            if x < minpos:
                minpos = x
        if x > xstar:
            xstar = x
            if hits.size > 0:
                hits[x] = t
        while c < ncp and cps[c] <= t:
            cp_out[c] = xstar
            c += 1
        if t >= max_steps:
            return t, L, minpos, BUDGET
    while c < ncp:
        cp_out[c] = target
        c += 1
    return t, L, minpos, OK


@njit(cache=True, parallel=True)
def hit_times_kernel(omega, off, target, key, first_task, m, max_steps):
    T = np.empty(m, dtype=np.int64)
    L = np.empty(m, dtype=np.int64)
    mn = np.empty(m, dtype=np.int64)
    status = np.empty(m, dtype=np.int64)
    cps = np.zeros(0, dtype=np.int64)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first_task + p)
        cp_out = np.zeros(0, dtype=np.int64)
        hits = np.zeros(0, dtype=np.int64)
        t, l, mp, s = _walk_hit(omega, off, target, st, cps, cp_out, hits, max_steps)
        T[p] = t
        L[p] = l
        mn[p] = mp
        status[p] = s
    return T, L, mn, status


@njit(cache=True)
def _walk_time(omega, off, tmax, state, cps, x_out, xstar_out):
    x = 0
    xstar = 0
    c = 0
    ncp = cps.size
    while c < ncp and cps[c] <= 0:
        x_out[c] = 0
        xstar_out[c] = 0
        c += 1
    for t in range(1, tmax + 1):
        i = x + off
        if i <= 0:
            return UNDERFLOW
        if i >= omega.size - 1:
            return OVERFLOW
        if next_uniform(state) < omega[i]:
            x += 1
        else:
            x -= 1
        if x > xstar:
            xstar = x
        while c < ncp and cps[c] <= t:
            x_out[c] = x
            xstar_out[c] = xstar
            c += 1
    return OK


@njit(cache=True, parallel=True)
def walk_time_kernel(omega, off, cps, key, first_task, m):
    tmax = cps[cps.size - 1]
    X = np.empty((m, cps.size), dtype=np.int64)
    XS = np.empty((m, cps.size), dtype=np.int64)
    status = np.empty(m, dtype=np.int64)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first_task + p)
        status[p] = _walk_time(omega, off, tmax, st, cps, X[p], XS[p])
    return X, XS, status


@njit(cache=True)
def _walk_hit_hashed(omega, off, target, key, visits, moves, max_steps):
    """Walk to ``target``; the k-th visit to site x uses uniform ``hash(x, k)``.

    ``moves`` (if non-empty) receives +1/-1 per step.
    """
    x = 0
    t = 0
    L = 0
    minpos = 0
    while x < target:
        i = x + off
        if i <= 0:
            return t, L, minpos, UNDERFLOW
        k = visits[i]
        visits[i] = k + 1
        if hash_uniform(key, x, k) <= omega[i]:
            step = 1
        else:
            step = -1
        if t < moves.size:
            moves[t] = step
        x += step
        t += 1
        if x < 0:
            L += 1
            if x < minpos:
                minpos = x
        if t >= max_steps:
            return t, L, minpos, BUDGET
    return t, L, minpos, OK


@njit(cache=True, parallel=True)
def coupled_pair_kernel(omega, omega2, off, target, key, first_task, m, max_steps):
    out = np.empty((m, 6), dtype=np.int64)
    mv = np.zeros(0, dtype=np.int8)
    for p in prange(m):
        k = task_state(key, first_task + p)
        v1 = np.zeros(omega.size, dtype=np.int64)
        v2 = np.zeros(omega2.size, dtype=np.int64)
        t1, l1, m1, s1 = _walk_hit_hashed(omega, off, target, k, v1, mv, max_steps)
        t2, l2, m2, s2 = _walk_hit_hashed(omega2, off, target, k, v2, mv, max_steps)
        out[p, 0] = t1
        out[p, 1] = l1
        out[p, 2] = t2
        out[p, 3] = l2
        out[p, 4] = min(m1, m2)
        out[p, 5] = s1 if s1 != 0 else s2
    return out


@njit(cache=True)
def _excursion(omega, a, nu, state, max_steps):
    """One excursion from array index a: returns (duration, success, status).

    Success means reaching a + nu before returning to a.
    """
    x = a
    t = 0
    while True:
        if x <= 0:
            return t, False, UNDERFLOW
        if next_uniform(state) < omega[x]:
            x += 1
        else:
            x -= 1
        t += 1
        if x == a:
            return t, False, OK
        if x == a + nu:
            return t, True, OK
        if t >= max_steps:
            return t, False, BUDGET


@njit(cache=True, parallel=True)
def excursion_kernel(omega, a, nu, c, key, first_task, m, max_excursions, max_steps):
    """Per draw: tau, N = floor(c tau), S, sum of N failures, one probe failure."""
    tau_out = np.empty(m)
    N_out = np.empty(m, dtype=np.int64)
    S_out = np.empty(m, dtype=np.int64)
    F_sum = np.empty(m, dtype=np.int64)
    F_probe = np.empty(m, dtype=np.int64)
    status = np.zeros(m, dtype=np.int64)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first_task + p)
        tau = next_exponential(st)
        N = int(math.floor(c * tau))
        need_f = N + 1
        got_f = 0
        fsum = 0
        probe = -1
        S = -1
        used = 0
        while got_f < need_f or S < 0:
            d, ok, s = _excursion(omega, a, nu, st, max_steps)
            used += 1
            if s != 0:
                status[p] = s
                break
            if ok:
                if S < 0:
                    S = d
            elif got_f < need_f:
                if got_f < N:
                    fsum += d
                else:
                    probe = d
                got_f += 1
            if used > max_excursions:
                status[p] = BUDGET
                break
        tau_out[p] = tau
        N_out[p] = N
        S_out[p] = S
        F_sum[p] = fsum
        F_probe[p] = probe
    return tau_out, N_out, S_out, F_sum, F_probe, status


# --- public API ----------------------------------------------------------
def _check_target(env, target):
    if target < 1:
        raise ValueError("target must be >= 1")
    env.index(target)
    if env.left >= 0:
        raise WindowError("window must extend left of 0")


def run_to_hit(env: Environment, target: int, seed: int, path_id: int = 0, checkpoints=(),
               record_hits: bool = True, max_steps: int = DEFAULT_MAX_STEPS) -> PathSummary:
    """One exact path from 0 until it first hits ``target``."""
    _check_target(env, target)
    cps = np.sort(np.asarray(checkpoints, dtype=np.int64))
    cp_out = np.zeros(cps.size, dtype=np.int64)
    hits = np.zeros(target + 1 if record_hits else 0, dtype=np.int64)
    st = state_array(kernel_key(seed, "walk"), path_id)
    T, L, mn, status = _walk_hit(env.omega, env.offset, target, st, cps, cp_out, hits, max_steps)
    _raise_status(status)
    return PathSummary(target, int(T), int(L), int(mn), cps, cp_out, hits if record_hits else None)


def hitting_times(env: Environment, target: int, n_paths: int, seed: int, stream="walk-batch",
                  max_steps: int = DEFAULT_MAX_STEPS):
    """Arrays ``(T, L, min_position)`` of ``n_paths`` independent paths."""
    _check_target(env, target)
    T, L, mn, status = hit_times_kernel(env.omega, env.offset, target,
                                        kernel_key(seed, stream), 0, n_paths, max_steps)
    if np.any(status != OK):
        _raise_status(int(status[status != OK][0]))
    return T, L, mn


def crossing_times(env: Environment, x: int, n_paths: int, seed: int):
    """Samples of ``T_{x+1}`` for the walk started at x."""
    shifted = Environment(env.omega, env.left - x, env.dist)
    T, _, _ = hitting_times(shifted, 1, n_paths, seed, stream=("cross", x))
    return T


def positions(env: Environment, times, n_paths: int, seed: int, stream="walk-time"):
    """Positions ``X_t`` and running maxima ``X*_t`` at the given times."""
    cps = np.sort(np.asarray(times, dtype=np.int64))
    X, XS, status = walk_time_kernel(env.omega, env.offset, cps, kernel_key(seed, stream), 0, n_paths)
    if np.any(status != OK):
        _raise_status(int(status[status != OK][0]))
    return X, XS


def coupled_pair_run(env: Environment, env_prime: Environment, target: int, seed: int,
                     path_id: int = 0, max_steps: int = DEFAULT_MAX_STEPS):
    """Two walks sharing the uniform used on each (site, visit index)."""
    _check_pair(env, env_prime, target)
    key = np.uint64(task_state(kernel_key(seed, "pair"), path_id))
    summaries = []
    for e in (env, env_prime):
        visits = np.zeros(e.omega.size, dtype=np.int64)
        T, L, mn, status = _walk_hit_hashed(e.omega, e.offset, target, key, visits,
                                            np.zeros(0, dtype=np.int8), max_steps)
        _raise_status(status)
        summaries.append(PathSummary(target, int(T), int(L), int(mn)))
    a, b = summaries
    if abs(a.T - b.T) != abs(a.L - b.L):
        raise AssertionError("coupled walks disagree on sites >= 0")
    return a, b


def move_log(env: Environment, target: int, seed: int, path_id: int = 0, max_len: int = 1_000_000):
    """Move sequence (+1/-1) of the hashed walk used by :func:`coupled_pair_run`."""
    key = np.uint64(task_state(kernel_key(seed, "pair"), path_id))
    visits = np.zeros(env.omega.size, dtype=np.int64)
    moves = np.zeros(max_len, dtype=np.int8)
    T, _, _, status = _walk_hit_hashed(env.omega, env.offset, target, key, visits, moves, DEFAULT_MAX_STEPS)
    _raise_status(status)
    return moves[:min(T, max_len)]


def coupled_pairs(env: Environment, env_prime: Environment, target: int, n_runs: int, seed: int,
                  max_steps: int = DEFAULT_MAX_STEPS):
    """Batch version; columns ``T, L, T', L'``."""
    _check_pair(env, env_prime, target)
    out = coupled_pair_kernel(env.omega, env_prime.omega, env.offset, target,
                              kernel_key(seed, "pair"), 0, n_runs, max_steps)
    bad = out[:, 5] != OK
    if np.any(bad):
        _raise_status(int(out[bad, 5][0]), "coupled walk")
    return out[:, :4]


def _check_pair(env, env_prime, target):
    _check_target(env, target)
    if env.left != env_prime.left or env.omega.size != env_prime.omega.size:
        raise ValueError("coupled environments must share the window")
    o = env.offset
    if not np.array_equal(env.omega[o:], env_prime.omega[o:]):
        raise ValueError("coupled environments must agree on sites >= 0")


def success_probability(env: Environment, lo: int, hi: int) -> float:
    """``P^lo(T_hi < T_lo^+)``: first step right, then exit [lo, hi] on the right."""
    w = env.omega_at(lo)
    if hi - lo == 1:
        return w
    return w * r_sum(env, lo, lo) / r_sum(env, lo, hi - 1)


@dataclass
class ExcursionSample:
    """Vectorised excursion draws for one block."""

    p: float
    c: float
    tau: np.ndarray
    N: np.ndarray
    S: np.ndarray
    F_sum: np.ndarray
    F_probe: np.ndarray

    @property
    def T(self) -> np.ndarray:
        return self.S + self.F_sum


def excursion_decomposition(env: Environment, lo: int, hi: int, n_draws: int, seed: int,
                            max_excursions: int = 10 ** 8, max_steps: int = DEFAULT_MAX_STEPS,
                            stream="excursion") -> ExcursionSample:
    """``T_nu = S + sum_{j<=N} F_j`` with ``N = floor(c tau)``, ``c = -1/log(1-p)``."""
    if hi <= lo:
        raise ValueError("block must have positive length")
    env.index(lo), env.index(hi)
    p = success_probability(env, lo, hi)
    c = -1.0 / math.log1p(-p)
    out = excursion_kernel(env.omega, env.index(lo), hi - lo, c, kernel_key(seed, stream), 0,
                           n_draws, max_excursions, max_steps)
    tau, N, S, F_sum, F_probe, status = out
    if np.any(status == BUDGET):
        raise RejectionBudgetError(
            f"excursion budget {max_excursions} exceeded (p = {p:.3g}, block length {hi - lo})")
    if np.any(status != OK):
        _raise_status(int(status[status != OK][0]), "excursion")
    return ExcursionSample(p, c, tau, N, S, F_sum, F_probe)


def excursion_decomposition_sample(env: Environment, lo: int, hi: int, seed: int,
                                   draw_id: int = 0) -> ExcursionDraw:
    """One draw with the individual failed-excursion durations."""
    p = success_probability(env, lo, hi)
    c = -1.0 / math.log1p(-p)
    st = state_array(kernel_key(seed, "excursion-single"), draw_id)
    tau = float(next_exponential(st))
    N = int(math.floor(c * tau))
    a = env.index(lo)
    F, S = [], None
    while len(F) < N or S is None:
        d, ok, status = _excursion(env.omega, a, hi - lo, st, DEFAULT_MAX_STEPS)
        _raise_status(status, "excursion")
        if ok:
            S = d if S is None else S
        elif len(F) < N:
            F.append(d)
    F = np.asarray(F, dtype=np.int64)
    return ExcursionDraw(p, c, tau, N, int(S), F, int(S + F.sum()))


def coupling_variance_check(env: Environment, lo: int, hi: int, n_paths: int, seed: int,
                            beta: float | None = None, n_batches: int = 20) -> dict:
    """Monte Carlo check of ``Var(T - beta tau) <= (ES)^2 + (EF)^2/3 + Var T - (EF)^2 Var N``.

    ``beta`` defaults to the exact ``E T_nu`` from the crossing means.  Standard
    errors come from ``n_batches`` batch means.
    """
    from .quenched import crossing_mean

    if beta is None:
        beta = math.fsum(crossing_mean(env, x) for x in range(lo, hi))
    ex = excursion_decomposition(env, lo, hi, n_paths, seed, stream="varcheck")
    T = ex.T.astype(float)
    var_n = (1.0 - ex.p) / ex.p ** 2

    def lhs_rhs(idx):
        t, tau = T[idx], ex.tau[idx]
        lhs = np.var(t - beta * tau, ddof=1)
        es = ex.S[idx].mean()
        ef = ex.F_probe[idx].mean()
        rhs = es ** 2 + ef ** 2 / 3.0 + np.var(t, ddof=1) - ef ** 2 * var_n
        return lhs, rhs

    lhs, rhs = lhs_rhs(slice(None))
    parts = np.array([lhs_rhs(b) for b in np.array_split(np.arange(n_paths), n_batches)])
    se_l = parts[:, 0].std(ddof=1) / math.sqrt(n_batches)
    se_r = parts[:, 1].std(ddof=1) / math.sqrt(n_batches)
    se = math.hypot(se_l, se_r)
    return {
        "lhs": float(lhs), "rhs": float(rhs), "se_lhs": float(se_l), "se_rhs": float(se_r),
        "se": float(se), "beta": float(beta), "p": float(ex.p),
        "E_S": float(ex.S.mean()), "E_F": float(ex.F_probe.mean()),
        "pass": bool(lhs <= rhs + 3.0 * se),
    }


# --- annealed kernels --------------------------------------------------------
@njit(cache=True, parallel=True)
def annealed_hit_kernel(kind, vals, cum, depth, target, key, first_task, m, max_steps):
    """Fresh P-environment per path; returns T_target (status in second array)."""
    T = np.empty(m, dtype=np.int64)
    status = np.empty(m, dtype=np.int64)
    cps = np.zeros(0, dtype=np.int64)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first_task + p)
        om = np.empty(depth + target + 1)
        for i in range(om.size):
            om[i] = draw_omega(st, kind, vals, cum)
        cp_out = np.zeros(0, dtype=np.int64)
        hits = np.zeros(0, dtype=np.int64)
        t, l, mn, s = _walk_hit(om, depth, target, st, cps, cp_out, hits, max_steps)
        T[p] = t
        status[p] = s
    return T, status


@njit(cache=True, parallel=True)
def annealed_time_kernel(kind, vals, cum, depth, cps, key, first_task, m):
    """Fresh P-environment per path; positions and maxima at checkpoint times."""
    tmax = cps[cps.size - 1]
    X = np.empty((m, cps.size), dtype=np.int64)
    XS = np.empty((m, cps.size), dtype=np.int64)
    status = np.empty(m, dtype=np.int64)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first_task + p)
        om = np.empty(depth + tmax + 2)
        for i in range(om.size):
            om[i] = draw_omega(st, kind, vals, cum)
        status[p] = _walk_time(om, depth, tmax, st, cps, X[p], XS[p])
    return X, XS, status


def annealed_hitting_times(dist, target: int, n_paths: int, seed: int, depth: int = 400,
                           stream="annealed-hit", max_steps: int = DEFAULT_MAX_STEPS):
    kind, vals, cum = dist.kernel_params()
    T, status = annealed_hit_kernel(kind, vals, cum, depth, target, kernel_key(seed, stream), 0,
                                    n_paths, max_steps)
    if np.any(status != OK):
        _raise_status(int(status[status != OK][0]), "annealed walk")
    return T


def annealed_positions(dist, times, n_paths: int, seed: int, depth: int = 400, stream="annealed-time"):
    kind, vals, cum = dist.kernel_params()
    cps = np.sort(np.asarray(times, dtype=np.int64))
    X, XS, status = annealed_time_kernel(kind, vals, cum, depth, cps, kernel_key(seed, stream), 0, n_paths)
    if np.any(status != OK):
        _raise_status(int(status[status != OK][0]), "annealed walk")
    return X, XS


# --- hitting times from left-step counts -----------------------------------------
# U_y, the number of steps from y to y-1 before T_n, satisfies
#   U_y ~ NegBin(U_{y+1} + 1, omega_y) for 0 <= y < n   (U_n = 0),
#   U_y ~ NegBin(U_{y+1}, omega_y)     for y < 0,
# and T_n = n + 2 sum_y U_y.  This samples T_n exactly in O(n) time.
@njit(cache=True)
def _branching_T(omega, off, n, st):
    U = 0
    total = 0
    for y in range(n - 1, -1, -1):
        U = next_negbin(st, U + 1, omega[y + off])
        total += U
    i = off - 1
    while U > 0:
        if i < 0:
            return -1, total
        U = next_negbin(st, U, omega[i])
        total += U
        i -= 1
    return n + 2 * total, total


@njit(cache=True, parallel=True)
def branching_kernel(omega, off, n, key, first_task, m):
    T = np.empty(m, dtype=np.int64)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first_task + p)
        T[p] = _branching_T(omega, off, n, st)[0]
    return T


@njit(cache=True, parallel=True)
def annealed_branching_kernel(kind, vals, cum, n, key, first_task, m):
    """Annealed ``T_n``: fresh environment per sample, left half drawn lazily without truncation."""
    T = np.empty(m, dtype=np.int64)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first_task + p)
        om = np.empty(n)
        for i in range(n):
            om[i] = draw_omega(st, kind, vals, cum)
        U = 0
        total = 0
        for y in range(n - 1, -1, -1):
            U = next_negbin(st, U + 1, om[y])
            total += U
        while U > 0:
            U = next_negbin(st, U, draw_omega(st, kind, vals, cum))
            total += U
        T[p] = n + 2 * total
    return T


def hitting_times_fast(env: Environment, target: int, n_samples: int, seed: int, stream="branching"):
    """Exact samples of ``T_target`` from the left-step branching representation."""
    _check_target(env, target)
    T = branching_kernel(env.omega, env.offset, target, kernel_key(seed, stream), 0, n_samples)
    if np.any(T < 0):
        raise WindowUnderflowError("left-step counts reached the left end of the window")
    return T


def annealed_hitting_times_fast(dist, target: int, n_samples: int, seed: int, stream="annealed-branching"):
    kind, vals, cum = dist.kernel_params()
    return annealed_branching_kernel(kind, vals, cum, target, kernel_key(seed, stream, target), 0, n_samples)
