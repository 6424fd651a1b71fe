"""Environment laws, environment windows and the products/sums built from rho.

Sites are integers; an :class:`Environment` stores ``omega[x - left]`` for
``left <= x <= right``.  With ``rho_x = (1 - omega_x) / omega_x``:

* ``big_pi(i, j)``  is the product of rho over ``[i, j]`` (1 when ``i > j``),
* ``r_sum(i, j)``   is ``sum_{k=i}^{j} big_pi(i, k)``,
* ``w_sum(i, j)``   is ``sum_{k=i}^{j} big_pi(k, j)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from numba import njit
from scipy import integrate, optimize

from .errors import (
    AcceptanceTooLowError,
    EmptyRangeError,
    HeavyParameterError,
    InsufficientWindowError,
    NoKappaError,
    WindowError,
)
from .rng import kernel_key, next_uniform, state_array

FINITE, UNIFORM = 0, 1
_FAMILIES = ("two-point", "finite", "uniform")


@dataclass(frozen=True)
class EnvDistribution:
    """Law of a single ``omega_x``; sites are i.i.d. under it.

    ``family`` is ``"two-point"``, ``"finite"`` (``support`` holds the omega
    atoms, ``weights`` their probabilities) or ``"uniform"`` (``support`` is
    the interval ``(low, high)`` for omega, ``weights`` is empty).
    """

    family: str
    support: tuple
    weights: tuple = ()

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        sup = tuple(float(s) for s in self.support)
        object.__setattr__(self, "support", sup)
        if any(not 0.0 < s < 1.0 for s in sup):
            raise ValueError("omega support must lie strictly inside (0, 1)")
        if self.family == "uniform":
            if len(sup) != 2 or not sup[0] < sup[1]:
                raise ValueError("uniform family needs low < high")
            object.__setattr__(self, "weights", ())
        else:
            w = tuple(float(x) for x in self.weights)
            object.__setattr__(self, "weights", w)
            if len(w) != len(sup) or len(sup) == 0:
                raise ValueError("weights must match support")
            if self.family == "two-point" and len(sup) != 2:
                raise ValueError("two-point family needs two atoms")
            if min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        if not self.mean_log_rho() < 0:
            raise ValueError("E[log rho] must be negative (walk transient to the right)")

    # --- moments -------------------------------------------------------
    @property
    def rho_atoms(self) -> np.ndarray:
        s = np.asarray(self.support)
        return (1.0 - s) / s

    def _expect(self, f):
        if self.family == "uniform":
            a, b = self.support
            val, _ = integrate.quad(lambda w: f((1.0 - w) / w), a, b, epsabs=1e-15, epsrel=1e-13, limit=200)
            return val / (b - a)
        rho = self.rho_atoms
        return float(np.dot(self.weights, f(rho)))

    def mean_log_rho(self) -> float:
        return self._expect(np.log)

    def moment(self, s: float) -> float:
        """E[rho^s]."""
        return self._expect(lambda r: r ** s)

    def moment_log(self, s: float) -> float:
        """E[rho^s log rho]."""
        return self._expect(lambda r: r ** s * np.log(r))

    def mean_omega(self) -> float:
        if self.family == "uniform":
            return 0.5 * sum(self.support)
        return float(np.dot(self.weights, self.support))

    def var_omega(self) -> float:
        if self.family == "uniform":
            a, b = self.support
            return (b - a) ** 2 / 12.0
        s = np.asarray(self.support)
        return float(np.dot(self.weights, s * s)) - self.mean_omega() ** 2

    def prob_rho_above_one(self) -> float:
        if self.family == "uniform":
            a, b = self.support
            return max(0.0, min(b, 0.5) - a) / (b - a)
        return float(sum(w for w, r in zip(self.weights, self.rho_atoms) if r > 1.0))

    def is_lattice(self) -> bool:
        """Whether log rho lives on a shifted lattice ``a + h Z``."""
        if self.family == "uniform":
            return False
        logs = sorted({float(x) for x, w in zip(np.log(self.rho_atoms), self.weights) if w > 0})
        if len(logs) <= 2:
            return True
        base = logs[1] - logs[0]
        for v in logs[2:]:
            ratio = (v - logs[0]) / base
            frac = Fraction(ratio).limit_denominator(1000)
            if abs(ratio - float(frac)) < 1e-9:
                continue
            return False
        return True

    # --- kernel encoding ----------------------------------------------
    def kernel_params(self):
        """``(kind, values, cumulative)`` arrays for numba samplers."""
        if self.family == "uniform":
            return UNIFORM, np.array(self.support), np.array([1.0])
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        return FINITE, np.array(self.support), cum

    # --- config ---------------------------------------------------------
    def to_config(self) -> dict:
        if self.family == "uniform":
            return {"family": "uniform", "low": self.support[0], "high": self.support[1]}
        return {"family": self.family, "omega": list(self.support), "weights": list(self.weights)}

    @classmethod
    def from_config(cls, cfg: dict) -> "EnvDistribution":
        fam = cfg["family"]
        if fam == "reference":
            return reference_family(float(cfg["kappa"]))
        if fam == "uniform":
            return cls("uniform", (cfg["low"], cfg["high"]))
        return cls(fam, tuple(cfg["omega"]), tuple(cfg["weights"]))


def two_point(omega_hi: float, omega_lo: float, p_hi: float) -> EnvDistribution:
    return EnvDistribution("two-point", (omega_hi, omega_lo), (p_hi, 1.0 - p_hi))


def constant(omega: float) -> EnvDistribution:
    """Degenerate law; only valid when omega > 1/2."""
    return EnvDistribution("finite", (omega,), (1.0,))


# (rho atoms, middle weight) of the three-point reference families.  Log-ratios
# are irrational to every tested denominator, so log rho is non-lattice.  The
# atoms were picked so that the crossing-mean tail is close to a pure power law
# from the 1% quantile onwards (checked on 4e6 samples).
REFERENCE_ATOMS = {
    0.75: ((0.15, 1.2, 4.0), 0.2),
    1.0: ((0.1, 1.3, 2.9), 0.2),
    1.5: ((0.1, 1.3, 2.9), 0.2),
}
REFERENCE_RHO, REFERENCE_MIDDLE_WEIGHT = REFERENCE_ATOMS[1.0]


def three_atom_family(rho_atoms, middle_weight: float, kappa: float) -> EnvDistribution:
    """Three-atom law with E[rho^kappa] = 1; the outer weights are solved for."""
    r1, r2, r3 = (float(r) for r in rho_atoms)
    if not r1 < 1.0 < r3:
        raise ValueError("need rho_1 < 1 < rho_3")
    rest = 1.0 - middle_weight
    # w1 r1^k + m r2^k + (rest - w1) r3^k = 1
    w1 = (rest * r3 ** kappa + middle_weight * r2 ** kappa - 1.0) / (r3 ** kappa - r1 ** kappa)
    w3 = rest - w1
    if not (0.0 < w1 < rest):
        raise ValueError("kappa not reachable with these atoms")
    omega = tuple(1.0 / (1.0 + r) for r in (r1, r2, r3))
    return EnvDistribution("finite", omega, (w1, middle_weight, w3))


def reference_family(kappa: float) -> EnvDistribution:
    """Default non-lattice family used by the limit-theorem experiments."""
    atoms, mw = REFERENCE_ATOMS.get(float(kappa), (REFERENCE_RHO, REFERENCE_MIDDLE_WEIGHT))
    return three_atom_family(atoms, mw, kappa)


# --- kappa ----------------------------------------------------------------
@dataclass(frozen=True)
class KappaSolution:
    kappa: float
    residual: float
    moment_log: float
    lattice: bool


def solve_kappa(dist: EnvDistribution) -> KappaSolution:
    """Positive root of ``E[rho^s] = 1``."""
    if dist.prob_rho_above_one() <= 0.0:
        raise NoKappaError("rho <= 1 almost surely; E[rho^s] < 1 for every s > 0")

    def f(s):
        m = dist.moment(s)
        if not np.isfinite(m):
            raise HeavyParameterError(f"E[rho^{s}] diverged")
        return math.log(m)

    hi = 1.0
    while f(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e4:
            raise HeavyParameterError("no crossing of E[rho^s] = 1 below s = 1e4")
    # f < 0 just right of zero because E[log rho] < 0
    lo = hi
    while True:
        lo *= 0.5
        if f(lo) < 0.0:
            break
        if lo < 1e-12:
            raise NoKappaError("could not bracket the root")
    kappa = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    residual = abs(dist.moment(kappa) - 1.0)
    if residual > 1e-10:
        raise NoKappaError(f"root residual {residual:.3g} above 1e-10")
    return KappaSolution(kappa, residual, dist.moment_log(kappa), dist.is_lattice())


def mean_ladder_length(dist: EnvDistribution, tol: float = 1e-14, max_terms: int = 20000) -> float:
    """Exact E[nu] via Spitzer's identity ``E nu = exp(sum_k P(S_k >= 0) / k)``.

    ``S_k`` is the random walk with steps log rho; only finite-support laws
    are handled (the probabilities are multinomial sums).
    """
    if dist.family == "uniform":
        raise NotImplementedError("exact E[nu] only for finite-support laws")
    logs = np.log(dist.rho_atoms)
    w = np.asarray(dist.weights)
    keep = w > 0
    logs, w = logs[keep], w[keep]
    total = 0.0
    for k in range(1, max_terms + 1):
        p = _prob_nonnegative(logs, w, k)
        total += p / k
        if p < tol and k > 10:
            break
    else:
        raise RuntimeError("Spitzer series did not converge")
    return math.exp(total)


def _prob_nonnegative(logs, w, k):
    from scipy.special import gammaln

    lw = np.log(w)
    if len(logs) == 1:
        return 1.0 if logs[0] >= 0 else 0.0
    if len(logs) == 2:
        a = np.arange(k + 1)
        s = a * logs[0] + (k - a) * logs[1]
        lp = gammaln(k + 1) - gammaln(a + 1) - gammaln(k - a + 1) + a * lw[0] + (k - a) * lw[1]
        return float(np.exp(lp[s >= -1e-12]).sum())
    if len(logs) == 3:
        a, b = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
        c = k - a - b
        ok = c >= 0
        a, b, c = a[ok], b[ok], c[ok]
        s = a * logs[0] + b * logs[1] + c * logs[2]
        lp = (gammaln(k + 1) - gammaln(a + 1) - gammaln(b + 1) - gammaln(c + 1)
              + a * lw[0] + b * lw[1] + c * lw[2])
        return float(np.exp(lp[s >= -1e-12]).sum())
    raise NotImplementedError("exact E[nu] implemented for at most three atoms")


def speed(dist: EnvDistribution) -> float:
    """Limiting velocity ``(1 - E rho) / (1 + E rho)``; zero when E rho >= 1."""
    m = dist.moment(1.0)
    return max(0.0, (1.0 - m) / (1.0 + m))


# --- environments -------------------------------------------------------
@dataclass
class Environment:
    omega: np.ndarray
    left: int
    dist: EnvDistribution | None = None
    seed: int | None = None
    q_conditioned: bool = False
    _log_rho: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.omega = np.ascontiguousarray(self.omega, dtype=float)
        self.left = int(self.left)
        if self.omega.ndim != 1 or self.omega.size == 0:
            raise ValueError("omega must be a non-empty 1-d array")
        if not np.all((self.omega > 0) & (self.omega < 1)):
            raise ValueError("every omega_x must lie in (0, 1)")

    @classmethod
    def from_rho(cls, rho, left: int = 0, **kw) -> "Environment":
        rho = np.asarray(rho, dtype=float)
        return cls(1.0 / (1.0 + rho), left, **kw)

    @property
    def right(self) -> int:
        return self.left + self.omega.size - 1

    @property
    def offset(self) -> int:
        """Array index of site 0."""
        return -self.left

    @property
    def rho_array(self) -> np.ndarray:
        return (1.0 - self.omega) / self.omega

    @property
    def log_rho(self) -> np.ndarray:
        if self._log_rho is None:
            self._log_rho = np.log1p(-self.omega) - np.log(self.omega)
        return self._log_rho

    def index(self, x: int) -> int:
        if not self.left <= x <= self.right:
            raise WindowError(f"site {x} outside window [{self.left}, {self.right}]")
        return x - self.left

    def omega_at(self, x: int) -> float:
        return float(self.omega[self.index(x)])

    def restrict(self, left: int, right: int) -> "Environment":
        a, b = self.index(left), self.index(right)
        return Environment(self.omega[a:b + 1].copy(), left, self.dist, self.seed, self.q_conditioned)

    # --- persistence -------------------------------------------------
    def _header(self) -> dict:
        return {
            "seed": self.seed,
            "left": self.left,
            "right": self.right,
            "q_conditioned": self.q_conditioned,
            "dist": None if self.dist is None else self.dist.to_config(),
        }

    def save_csv(self, path) -> None:
        path = Path(path)
        sites = np.arange(self.left, self.right + 1)
        with path.open("w") as fh:
            fh.write("# " + json.dumps(self._header(), sort_keys=True) + "\n")
            fh.write("site,omega\n")
            for x, w in zip(sites, self.omega):
                fh.write(f"{x},{float(w)!r}\n")

    @classmethod
    def load_csv(cls, path) -> "Environment":
        path = Path(path)
        with path.open() as fh:
            header = json.loads(fh.readline()[1:])
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        return cls._from_header(header, data[:, 1], int(data[0, 0]))

    def save_npz(self, path) -> None:
        np.savez(path, omega=self.omega, header=json.dumps(self._header(), sort_keys=True))

    @classmethod
    def load_npz(cls, path) -> "Environment":
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            return cls._from_header(header, z["omega"], header["left"])

    @classmethod
    def _from_header(cls, header, omega, left):
        dist = None if header.get("dist") is None else EnvDistribution.from_config(header["dist"])
        return cls(np.asarray(omega, dtype=float), left, dist, header.get("seed"),
                   bool(header.get("q_conditioned", False)))


def rho(env: Environment, x: int) -> float:
    w = env.omega_at(x)
    return (1.0 - w) / w


def log_big_pi(env: Environment, i: int, j: int) -> float:
    if i > j:
        return 0.0
    a, b = env.index(i), env.index(j)
    return float(math.fsum(env.log_rho[a:b + 1]))


def big_pi(env: Environment, i: int, j: int) -> float:
    """Product of rho over [i, j]; the empty product (i > j) is 1."""
    return math.exp(log_big_pi(env, i, j))


@njit(cache=True)
def _r_rec(rho, a, b):
    r = rho[b]
    for k in range(b - 1, a - 1, -1):
        r = rho[k] * (1.0 + r)
    return r


@njit(cache=True)
def _w_rec(rho, a, b):
    w = rho[a]
    for k in range(a + 1, b + 1):
        w = rho[k] * (1.0 + w)
    return w


def _check_range(env, i, j):
    if i > j:
        raise EmptyRangeError(f"empty range [{i}, {j}]")
    return env.index(i), env.index(j)


def r_sum(env: Environment, i: int, j: int) -> float:
    a, b = _check_range(env, i, j)
    return float(_r_rec(env.rho_array, a, b))


def w_sum(env: Environment, i: int, j: int) -> float:
    a, b = _check_range(env, i, j)
    return float(_w_rec(env.rho_array, a, b))


def w_inf(env: Environment, j: int, tol: float = 1e-10, with_error: bool = False):
    """``W_j`` approximated by ``W_{left, j}``.

    The deepest term ``big_pi(left, j)`` must be below ``tol``; the reported
    error is a geometric extrapolation of the omitted tail.
    """
    value = w_sum(env, env.left, j)
    last = big_pi(env, env.left, j)
    if last > tol:
        raise InsufficientWindowError(
            f"big_pi({env.left}, {j}) = {last:.3g} exceeds tol {tol:.3g}; extend the window left")
    n = j - env.left + 1
    q = last ** (1.0 / n) if last > 0 else 0.0
    err = last * q / (1.0 - q) if q < 1 else last
    return (value, err) if with_error else value


# --- sampling ----------------------------------------------------------
@njit(cache=True, inline="always")
def draw_omega(state, kind, vals, cum):
    u = next_uniform(state)
    if kind == UNIFORM:
        return vals[0] + (vals[1] - vals[0]) * u
    for k in range(cum.size):
        if u < cum[k]:
            return vals[k]
    return vals[vals.size - 1]


@njit(cache=True)
def fill_iid(state, kind, vals, cum, out, start, stop):
    for i in range(start, stop):
        out[i] = draw_omega(state, kind, vals, cum)


@njit(cache=True)
def fill_q_left(state, kind, vals, cum, out, offset, max_attempts):
    """Fill ``out[0:offset]`` (sites -offset..-1) so that every partial
    product ``big_pi(i, -1)`` is < 1.  Returns the number of attempts, or -1."""
    for attempt in range(1, max_attempts + 1):
        s = 0.0
        ok = True
        for k in range(offset - 1, -1, -1):
            w = draw_omega(state, kind, vals, cum)
            out[k] = w
            s += np.log((1.0 - w) / w)
            if s >= 0.0:
                ok = False
                break
        if ok:
            return attempt
    return -1


def default_q_depth(dist: EnvDistribution, omission: float = 1e-6) -> int:
    """Left depth after which the unchecked part of the Q-condition fails
    with probability well below ``omission``.

    Given the checked log-product ``-u`` at the boundary, the chance the
    remaining walk climbs back above zero is at most ``exp(-kappa u)``.
    """
    kappa = solve_kappa(dist).kappa
    drift = -dist.mean_log_rho()
    d = math.log(1.0 / omission) / (kappa * drift)
    return int(max(64, math.ceil(2.0 * d)))


def sample_env_P(dist: EnvDistribution, left_extent: int, right_extent: int, seed: int) -> Environment:
    """i.i.d. window over ``[left_extent, right_extent]``."""
    if left_extent > right_extent:
        raise ValueError("left_extent must not exceed right_extent")
    kind, vals, cum = dist.kernel_params()
    out = np.empty(right_extent - left_extent + 1)
    st = state_array(kernel_key(seed, "env-P"), 0)
    fill_iid(st, kind, vals, cum, out, 0, out.size)
    return Environment(out, left_extent, dist, seed, False)


def sample_env_Q(dist: EnvDistribution, left_extent: int | None, right_extent: int, seed: int,
                 max_attempts: int = 100_000) -> Environment:
    """Window drawn under Q: sites >= 0 i.i.d., sites < 0 by rejection until
    ``big_pi(i, -1) < 1`` for every checked ``i``."""
    if left_extent is None:
        left_extent = -default_q_depth(dist)
    if left_extent > -1:
        raise ValueError("Q-sampling needs left_extent <= -1")
    if right_extent < 0:
        raise ValueError("right_extent must be >= 0")
    kind, vals, cum = dist.kernel_params()
    depth = -left_extent
    out = np.empty(depth + right_extent + 1)
    key = kernel_key(seed, "env-Q")
    st = state_array(key, 0)
    fill_iid(st, kind, vals, cum, out, depth, out.size)
    st = state_array(key, 1)
    if fill_q_left(st, kind, vals, cum, out, depth, max_attempts) < 0:
        raise AcceptanceTooLowError(f"no accepted left half in {max_attempts} attempts")
    return Environment(out, left_extent, dist, seed, True)


def couple_P_Q(env_p: Environment, seed: int, max_attempts: int = 100_000) -> Environment:
    """Q-environment equal to ``env_p`` on sites >= 0 (fresh conditioned left half)."""
    if env_p.dist is None:
        raise ValueError("env_p must carry its distribution")
    kind, vals, cum = env_p.dist.kernel_params()
    out = env_p.omega.copy()
    depth = env_p.offset
    st = state_array(kernel_key(seed, "env-Q-couple"), 0)
    if fill_q_left(st, kind, vals, cum, out, depth, max_attempts) < 0:
        raise AcceptanceTooLowError(f"no accepted left half in {max_attempts} attempts")
    return Environment(out, env_p.left, env_p.dist, seed, True)
