"""Finite point processes on (0, inf) and the Poisson limit sampler."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import UndercountError
from .rng import generator

EMPIRICAL = "empirical"
POISSON = "poisson-sample"


@dataclass
class FinitePointProcess:
    """Positive atoms sorted in decreasing order.

    Poisson samples keep every point at or above ``eps_min``; what lies below
    is summarised by the intensity (``lam``, ``kappa``) and by
    ``floor_residual``, one draw of the compensated sum of the discarded
    points (Gaussian approximation, variance :attr:`floor_var`).
    """

    atoms: np.ndarray
    provenance: str = EMPIRICAL
    lam: float | None = None
    kappa: float | None = None
    eps_min: float = 0.0
    seed: int | None = None
    floor_residual: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.size and not np.all(a > 0):
            raise ValueError("atoms must be strictly positive")
        if a.size > 1 and np.any(np.diff(a) > 0):
            a = np.sort(a)[::-1]
        self.atoms = a

    def __len__(self) -> int:
        return self.atoms.size

    @property
    def is_poisson(self) -> bool:
        return self.provenance == POISSON

    def floor_moment(self, power: float) -> float:
        """``E sum_{x < eps_min} x^power`` under the intensity ``lam x^(-kappa-1)``."""
        if not self.is_poisson or self.eps_min == 0.0:
            return 0.0
        if power <= self.kappa:
            return math.inf
        return self.lam * self.eps_min ** (power - self.kappa) / (power - self.kappa)

    @property
    def floor_var(self) -> float:
        return self.floor_moment(2.0)

    @property
    def floor_mean(self) -> float:
        """Mean of the discarded atoms' sum, or 0 when it diverges (compensated use)."""
        if not self.is_poisson or self.kappa >= 1.0:
            return 0.0
        return self.floor_moment(1.0)

    def scaled(self, s: float) -> "FinitePointProcess":
        lam = None if self.lam is None else self.lam * s ** self.kappa
        return FinitePointProcess(self.atoms * s, self.provenance, lam, self.kappa, self.eps_min * s,
                                  self.seed, self.floor_residual * s)

    def save_csv(self, path) -> None:
        meta = {"provenance": self.provenance, "lam": self.lam, "kappa": self.kappa,
                "eps_min": self.eps_min, "seed": self.seed, "floor_residual": self.floor_residual}
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\natom\n")
            for a in self.atoms:
                fh.write(f"{float(a)!r}\n")

    @classmethod
    def load_csv(cls, path) -> "FinitePointProcess":
        with open(path) as fh:
            meta = json.loads(fh.readline()[2:])
            fh.readline()
            atoms = np.array([float(line) for line in fh])
        return cls(atoms, **meta)


def extract_Nn(betas, n: int, kappa: float) -> FinitePointProcess:
    """Atoms ``beta_i / n^(1/kappa)`` for the first ``n`` betas."""
    b = np.asarray(betas, dtype=float)
    if b.size != n:
        raise ValueError(f"expected {n} betas, got {b.size}")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if np.any(b <= 0):
        raise ValueError("betas must be positive")
    return FinitePointProcess(np.sort(b)[::-1] / n ** (1.0 / kappa))


def expected_count(lam: float, kappa: float, a: float, b: float = math.inf) -> float:
    """Mean number of points in ``(a, b)`` for intensity ``lam x^(-kappa-1)``."""
    return lam * (a ** -kappa - (0.0 if math.isinf(b) else b ** -kappa)) / kappa


def sample_poisson_Nlk(lam: float, kappa: float, eps_min: float, seed: int, realization: int = 0,
                       max_points: int = 50_000_000, stream="poisson") -> FinitePointProcess:
    """Points of intensity ``lam x^(-kappa-1)`` down to ``eps_min``.

    Uses ``(lam/kappa)^(1/kappa) Gamma_j^(-1/kappa)`` with ``Gamma_j`` the
    arrival times of a unit-rate Poisson process.
    """
    if lam <= 0 or kappa <= 0 or eps_min <= 0:
        raise ValueError("lam, kappa and eps_min must be positive")
    mean = expected_count(lam, kappa, eps_min)
    if mean > max_points:
        raise ValueError(f"expected {mean:.3g} points exceeds the cap {max_points}")
    rng = generator(seed, stream, realization)
    g_max = (lam / kappa) * eps_min ** -kappa  # atom >= eps_min  <=>  Gamma <= g_max
    chunk = int(mean + 6 * math.sqrt(mean) + 16)
    gam = np.cumsum(rng.exponential(size=chunk))
    while gam[-1] <= g_max:
        gam = np.concatenate((gam, gam[-1] + np.cumsum(rng.exponential(size=chunk))))
    gam = gam[gam <= g_max]
    atoms = (lam / kappa) ** (1.0 / kappa) * gam ** (-1.0 / kappa)
    pp = FinitePointProcess(atoms, POISSON, lam, kappa, eps_min, seed)
    if kappa < 2:
        pp.floor_residual = float(rng.normal(0.0, math.sqrt(pp.floor_var)))
    return pp


def count_above(pp: FinitePointProcess, x: float) -> int:
    """Number of atoms strictly greater than ``x``."""
    if pp.is_poisson and x <= pp.eps_min:
        raise UndercountError(f"x = {x} is not above the truncation floor {pp.eps_min}")
    # atoms are decreasing
    return int(np.searchsorted(-pp.atoms, -x, side="left"))


def count_between(pp: FinitePointProcess, a: float, b: float) -> int:
    """Atoms in ``(a, b]``."""
    return count_above(pp, a) - count_above(pp, b)


def sum_squares(pp: FinitePointProcess, with_bias: bool = False):
    s = float(math.fsum(pp.atoms ** 2))
    return (s, pp.floor_moment(2.0)) if with_bias else s


def sum_atoms(pp: FinitePointProcess, with_bias: bool = False):
    s = float(math.fsum(pp.atoms))
    return (s, pp.floor_moment(1.0)) if with_bias else s
