"""Ladder locations, block crossing means and their tail statistics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .env_core import EnvDistribution, Environment, default_q_depth, draw_omega, fill_q_left, solve_kappa, w_inf
from .errors import AcceptanceTooLowError, InsufficientWindowError
from .quenched import TrapStats, trap_stats
from .rng import generator, kernel_key, task_state


@dataclass
class LadderBlocks:
    """Ladder points ``locations[0] < locations[1] < ...`` and optional per-block data."""

    locations: np.ndarray
    betas: np.ndarray | None = None
    traps: list[TrapStats] = field(default_factory=list)

    @property
    def n_blocks(self) -> int:
        return len(self.locations) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.locations)

    @property
    def nu_bar(self) -> float:
        """Mean block length (estimate of ``E nu``)."""
        return float(self.lengths.mean())

    def check_ladder_property(self, env: Environment) -> bool:
        """Exact check that every block ends at the first drop of the running product below 1."""
        logs = env.log_rho
        for lo, hi in zip(self.locations[:-1], self.locations[1:]):
            run = np.cumsum(logs[env.index(lo):env.index(hi - 1) + 1])
            if not (run[-1] < 0 and np.all(run[:-1] >= 0)):
                return False
        return True


@njit(cache=True)
def _scan(log_rho, a, n_blocks):
    out = np.empty(n_blocks + 1, dtype=np.int64)
    out[0] = a
    found = 0
    s = 0.0
    for k in range(a, log_rho.size):
        s += log_rho[k]
        if s < 0.0:
            found += 1
            out[found] = k + 1
            s = 0.0
            if found == n_blocks:
                break
    return out, found


def ladder_locations(env: Environment, n_blocks: int, start: int = 0) -> LadderBlocks:
    """First ``n_blocks`` ladder points right of ``start`` by one scan of the log-product."""
    out, found = _scan(env.log_rho, env.index(start), n_blocks)
    if found < n_blocks:
        raise InsufficientWindowError(f"only {found} ladder blocks fit in the window", found=found)
    return LadderBlocks(out - env.offset)


@njit(cache=True)
def _block_betas(rho, a, locs, w_prev):
    n = locs.size - 1
    out = np.empty(n)
    w = w_prev
    k = a
    for b in range(n):
        tot = 0.0
        for _ in range(locs[b + 1] - locs[b]):
            w = rho[k] * (1.0 + w)
            tot += 1.0 + 2.0 * w
            k += 1
        out[b] = tot
    return out


def beta_sequence(blocks: LadderBlocks, env: Environment, tol: float = 1e-10,
                  with_traps: bool = False) -> LadderBlocks:
    """Fill ``beta_i = sum over the block of (1 + 2 W_x)``."""
    lo = int(blocks.locations[0])
    env.index(int(blocks.locations[-1]) - 1)
    w_prev = w_inf(env, lo - 1, tol)
    betas = _block_betas(env.rho_array, env.index(lo), blocks.locations, w_prev)
    traps = []
    if with_traps:
        traps = [trap_stats(env, int(a), int(b), i + 1)
                 for i, (a, b) in enumerate(zip(blocks.locations[:-1], blocks.locations[1:]))]
    return LadderBlocks(blocks.locations.copy(), betas, traps)


# --- streaming beta samples under Q -----------------------------------------
@njit(cache=True, parallel=True)
def q_beta_kernel(kind, vals, cum, depth, n_blocks, key, first_task, m, max_attempts):
    """Per task: one Q-environment, its first ``n_blocks`` betas and block lengths."""
    betas = np.empty((m, n_blocks))
    lengths = np.empty((m, n_blocks), dtype=np.int32)
    status = np.zeros(m, dtype=np.int64)
    for p in prange(m):
        st = np.empty(1, dtype=np.uint64)
        st[0] = task_state(key, first_task + p)
        left = np.empty(depth)
        if fill_q_left(st, kind, vals, cum, left, depth, max_attempts) < 0:
            status[p] = -1
            continue
        w = 0.0
        for k in range(depth):
            r = (1.0 - left[k]) / left[k]
            w = r * (1.0 + w)
        b = 0
        s = 0.0
        tot = 0.0
        ln = 0
        while b < n_blocks:
            om = draw_omega(st, kind, vals, cum)
            r = (1.0 - om) / om
            w = r * (1.0 + w)
            tot += 1.0 + 2.0 * w
            ln += 1
            s += math.log(r)
            if s < 0.0:
                betas[p, b] = tot
                lengths[p, b] = ln
                b += 1
                s = 0.0
                tot = 0.0
                ln = 0
    return betas, lengths, status


def sample_q_betas(dist: EnvDistribution, n_env: int, n_blocks: int, seed: int, depth: int | None = None,
                   stream="q-betas", max_attempts: int = 100_000, with_lengths: bool = False):
    """``(n_env, n_blocks)`` array of betas, one independent Q-environment per row."""
    depth = default_q_depth(dist) if depth is None else depth
    kind, vals, cum = dist.kernel_params()
    betas, lengths, status = q_beta_kernel(kind, vals, cum, depth, n_blocks, kernel_key(seed, stream), 0,
                                           n_env, max_attempts)
    if np.any(status != 0):
        raise AcceptanceTooLowError(f"Q-rejection failed within {max_attempts} attempts")
    return (betas, lengths) if with_lengths else betas


def save_betas_csv(path, betas, meta: dict) -> None:
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\nbeta\n")
        for b in np.ravel(betas):
            fh.write(f"{float(b)!r}\n")


def load_betas_csv(path):
    with open(path) as fh:
        meta = json.loads(fh.readline()[2:])
        fh.readline()
        vals = np.array([float(line) for line in fh])
    return vals, meta


# --- tail estimation ----------------------------------------------------------
@dataclass
class TailEstimate:
    kappa_hat: float
    C_hat: float
    lam_hat: float
    k: int
    n: int
    threshold: float
    se_kappa: float = float("nan")
    se_C: float = float("nan")
    C_known: float | None = None
    kappa_known: float | None = None

    @property
    def lam_known(self) -> float | None:
        """``kappa C`` with the exact exponent in both places."""
        if self.C_known is None:
            return None
        return self.kappa_known * self.C_known

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("kappa_hat", "C_hat", "lam_hat", "k", "n", "threshold",
                                               "se_kappa", "se_C", "C_known", "kappa_known")}


def default_k(n: int) -> int:
    return int(math.ceil(n ** 0.6))


def hill(sample, k: int | None = None):
    """Hill estimate ``(kappa_hat, threshold, C_hat)`` from the ``k`` largest values.

    The threshold is the (k+1)-th largest value and ``C_hat = (k/n) threshold^kappa_hat``.
    """
    x = np.asarray(sample, dtype=float)
    n = x.size
    k = default_k(n) if k is None else int(k)
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    top = -np.partition(-x, k)[:k + 1]
    top.sort()
    thr = top[0]
    if thr <= 0:
        raise ValueError("Hill estimator needs positive order statistics")
    inv = float(np.mean(np.log(top[1:])) - math.log(thr))
    if inv <= 0:
        raise ValueError("too few distinct exceedances")
    kap = 1.0 / inv
    return kap, float(thr), (k / n) * thr ** kap


def estimate_tail(betas, k: int | None = None, kappa_known: float | None = None, n_boot: int = 200,
                  seed: int = 0) -> TailEstimate:
    """Hill-type tail estimate with bootstrap standard errors.

    With ``kappa_known`` the constant is also estimated at the exact exponent,
    which removes the amplification of the exponent error by ``threshold^kappa``.
    """
    x = np.asarray(betas, dtype=float).ravel()
    n = x.size
    k = default_k(n) if k is None else int(k)
    if n < 50 or k < 10:
        raise ValueError("too few exceedances for a tail estimate")
    kap, thr, C = hill(x, k)
    se_k = se_c = float("nan")
    if n_boot > 1:
        rng = generator(seed, "hill-bootstrap")
        boots = np.array([hill(x[rng.integers(0, n, n)], k) for _ in range(n_boot)])
        se_k, se_c = boots[:, 0].std(ddof=1), boots[:, 2].std(ddof=1)
    C_known = None if kappa_known is None else (k / n) * thr ** kappa_known
    return TailEstimate(kap, C, kap * C, k, n, thr, float(se_k), float(se_c), C_known, kappa_known)


def estimate_tail_for(dist: EnvDistribution, n_samples: int, seed: int, **kw) -> TailEstimate:
    """Tail estimate from ``n_samples`` independent first-block betas."""
    b = sample_q_betas(dist, n_samples, 1, seed, stream="tail")[:, 0]
    return estimate_tail(b, kappa_known=solve_kappa(dist).kappa, seed=seed, **kw)


# --- centering -----------------------------------------------------------------
@dataclass
class CenteringSequences:
    n: int
    D_prime: float
    D: float
    D_second: float
    se_prime: float
    se: float
    se_second: float

    def as_tuple(self):
        return self.D_prime, self.D, self.D_second


def truncated_mean(sample, cut: float):
    """``E[X 1{X <= cut}]`` and its standard error."""
    x = np.asarray(sample, dtype=float)
    y = np.where(x <= cut, x, 0.0)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(y.size)) if y.size > 1 else 0.0


def centering_sequences(betas, nu_bar: float, n: int) -> CenteringSequences:
    """``D'(n) = E[beta 1{beta <= nu_bar n}]``, ``D(n) = (floor(n/nu_bar)/n) D'(floor(n/nu_bar))``,
    ``D''(n) = E[beta 1{beta <= n}]``."""
    dp, sp = truncated_mean(betas, nu_bar * n)
    m = math.floor(n / nu_bar)
    dpm, spm = truncated_mean(betas, nu_bar * m)
    d, s = m / n * dpm, m / n * spm
    d2, s2 = truncated_mean(betas, n)
    return CenteringSequences(n, dp, d, d2, sp, s, s2)
