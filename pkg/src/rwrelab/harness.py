"""Declarative experiment configs, deterministic runs and the verification suites."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .env_core import (Environment, EnvDistribution, constant, couple_P_Q, mean_ladder_length, sample_env_P,
                       sample_env_Q, solve_kappa, speed)
from .ladder import estimate_tail, ladder_locations, sample_q_betas, save_betas_csv
from .limit_laws import (HBAR, averaged_limit_sampler, draw_array, floor_for, make_sampler, stability_convolution_check,
                         stable_cdf, tail_prob)
from .parallel import threads as thread_scope
from .point_process import count_above, extract_Nn, sample_poisson_Nlk, sum_squares
from .quenched import crossing_second_moments, exit_prob, hitting_time_moments, quenched_mean_T
from .stat_tests import (EmpiricalDistribution, _clean, chi2_independence_poisson, geometric_gof_test,
                         ks_distance, ks_two_sample_test, poisson_dispersion_test)
from .walk import (annealed_hitting_times_fast, annealed_positions, coupled_pairs, coupling_variance_check,
                   excursion_decomposition, hitting_times, positions, run_to_hit)

EXPERIMENTS = ("exact", "formula-mc", "coupling", "tail", "point-process", "weak-quenched", "stability",
               "averaged", "time-space", "smoke")
# acceptance criterion number -> experiment id
CRITERIA = {1: "exact", 2: "formula-mc", 3: "coupling", 4: "tail", 5: "point-process", 6: "weak-quenched",
            7: "stability", 8: "averaged", 9: "time-space"}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    family: dict | None = None
    kappa: float | None = None
    n_grid: list = field(default_factory=list)
    n_env: int = 1
    n_paths: int = 1
    eps_min: float | None = None
    out: str | None = None
    threads: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.n_env < 1 or self.n_paths < 1:
            raise ValueError("counts must be >= 1")
        if self.seed is None:
            raise ValueError("an explicit seed is required")

    def dist(self) -> EnvDistribution:
        return EnvDistribution.from_config(self.family)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


@dataclass
class RunRecord:
    config_hash: str
    code_version: str
    reports: list
    wall_time: float
    artifacts: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.get("pass", True) for r in self.reports if r.get("criterion"))

    def reports_json(self) -> str:
        return json.dumps(self.reports, sort_keys=True)

    def hash(self) -> str:
        """Digest of everything except the wall time and artifact locations."""
        body = json.dumps({"config": self.config_hash, "version": self.code_version, "reports": self.reports},
                          sort_keys=True)
        return hashlib.sha256(body.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "code_version": self.code_version, "reports": self.reports,
                "wall_time": self.wall_time, "artifacts": self.artifacts, "hash": self.hash()}

    def summary(self) -> str:
        lines = []
        for r in self.reports:
            flag = "INFO" if "pass" not in r else ("PASS" if r["pass"] else "FAIL")
            star = "*" if r.get("criterion") else " "
            stat = r.get("statistic")
            p = r.get("p")
            extra = ""
            if stat is not None:
                extra += f" stat={stat:.4g}" if isinstance(stat, (int, float)) else f" stat={stat}"
            if p is not None:
                extra += f" p={p:.4g}" if isinstance(p, (int, float)) else f" p={p}"
            lines.append(f"{star}{flag} {r['test']}{extra}")
        return "\n".join(lines)


# --- default configurations -----------------------------------------------------------
def _ref(kappa):
    return {"family": "reference", "kappa": kappa}


DEFAULTS = {
    "exact": dict(family=_ref(0.75), kappa=0.75, n_env=1, n_paths=1, params={"n_intervals": 1000, "ruin_max": 40}),
    "formula-mc": dict(family=_ref(0.75), kappa=0.75, n_grid=[20], n_env=20, n_paths=100_000,
                       params={"depth": 300}),
    "coupling": dict(family=_ref(0.75), kappa=0.75, n_grid=[100], n_env=1, n_paths=10_000,
                     params={"ks_blocks": 5, "var_blocks": 20, "var_paths": 20_000, "coupled_runs": 10_000,
                             "depth": 300}),
    "tail": dict(family=None, kappa=None, n_env=100_000, n_paths=1, params={"kappas": [0.75, 1.5], "tol": 0.15}),
    "point-process": dict(family=_ref(0.75), kappa=0.75, n_grid=[10_000], n_env=1000, n_paths=1,
                          params={"tail_samples": 100_000, "mean_tol": 0.15, "corr_tol": 0.1}),
    "weak-quenched": dict(family=_ref(0.75), kappa=0.75, n_grid=[10_000], n_env=500, n_paths=10_000,
                          params={"tail_samples": 100_000, "threshold": 1.0, "poisson_points": 20_000,
                                  "exact_atoms": 200}),
    "stability": dict(family=None, kappa=None, n_env=1, n_paths=10_000,
                      params={"kappas": [0.75, 1.0, 1.5], "n_folds": [2, 4], "lam": 1.0, "points": 2000}),
    "averaged": dict(family=_ref(1.5), kappa=1.5, n_grid=[10_000], n_env=2000, n_paths=1,
                     params={"tail_samples": 100_000, "ks_tol": 0.05, "self_similar_family": _ref(0.75),
                             "self_similar_n": 10_000, "self_similar_samples": 2000}),
    "time-space": dict(family=_ref(1.5), kappa=1.5, n_grid=[1000, 10_000], n_env=300, n_paths=500,
                       params={"identity_paths": 10_000, "identity_target": 1000, "backtrack_paths": 10_000,
                               "backtrack_family": _ref(0.75), "trend_tol": 0.2, "time": 100_000, "x": -0.1,
                               "tail_envs": 2000, "tail_blocks": 10_000, "poisson_points": 2000, "depth": 400}),
    "smoke": dict(family=_ref(0.75), kappa=0.75, n_env=1, n_paths=1, params={}),
}


def default_config(experiment: str, seed: int = 20261016, **overrides) -> ExperimentConfig:
    d = copy.deepcopy(DEFAULTS[experiment])
    d.update(overrides)
    return ExperimentConfig(experiment=experiment, seed=seed, **d)


# --- helpers -------------------------------------------------------------------------------
class _Context:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.reports: list = []
        self.artifacts: list = []

    def add(self, rep: dict, criterion: bool = False) -> dict:
        rep = _clean(dict(rep))
        if criterion:
            rep["criterion"] = True
        self.reports.append(rep)
        return rep

    def artifact(self, name: str):
        if not self.cfg.out:
            return None
        os.makedirs(self.cfg.out, exist_ok=True)
        path = os.path.join(self.cfg.out, f"{self.cfg.experiment}-{name}")
        self.artifacts.append(path)
        return path


    def csv(self, name: str, header: str, *columns, fmt="%.17g") -> None:
        """Write equal-length columns as one CSV artifact (only when an output directory is set)."""
        path = self.artifact(name)
        if path:
            np.savetxt(path, np.column_stack(columns), delimiter=",", header=header, comments="", fmt=fmt)


def _p(cfg, key, default=None):
    return cfg.params.get(key, DEFAULTS.get(cfg.experiment, {}).get("params", {}).get(key, default))


def _tail_estimate(dist: EnvDistribution, n_samples: int, seed: int, ctx: _Context | None = None, tag="tail"):
    """Tail estimate from independent first-block betas (same stream in every experiment)."""
    kap = solve_kappa(dist).kappa
    b = sample_q_betas(dist, n_samples, 1, seed, stream=("tail", round(kap, 6)))[:, 0]
    te = estimate_tail(b, kappa_known=kap, seed=seed)
    if ctx is not None:
        path = ctx.artifact(f"{tag}-betas-k{kap:g}.csv")
        if path:
            save_betas_csv(path, b, {"family": dist.to_config(), "kappa": kap, "seed": seed, "n": n_samples})
    return te, b


def _window(dist, depth, right, seed, q=False):
    if q:
        return sample_env_Q(dist, -depth, right, seed)
    return sample_env_P(dist, -depth, right, seed)


# --- suites ----------------------------------------------------------------------------------
def suite_exact(cfg, ctx):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    half = Environment(np.full(300, 0.5), -100)
    jmax = _p(cfg, "ruin_max")
    err = 0.0
    count = 0
    for i in range(0, jmax):
        for j in range(i + 2, jmax + 1):
            for x in range(i + 1, j):
                err = max(err, abs(exit_prob(half, i, x, j, "right") - (x - i) / (j - i)))
                count += 1
    ctx.add({"test": "gamblers-ruin", "statistic": err, "pass": err <= 1e-12, "n": count}, True)

    env = sample_env_P(cfg.dist(), -50, 500, cfg.seed)
    worst = 0.0
    n_int = _p(cfg, "n_intervals")
    for _ in range(n_int):
        i = int(rng.integers(-50, 497))
        j = int(rng.integers(i + 2, 501))
        x = int(rng.integers(i + 1, j))
        s = exit_prob(env, i, x, j, "left") + exit_prob(env, i, x, j, "right")
        worst = max(worst, abs(s - 1.0))
    ctx.add({"test": "exit-sum", "statistic": worst, "pass": worst <= 1e-12, "n": n_int}, True)

    two = Environment(np.full(300, 2 / 3), -200, constant(2 / 3))
    et = quenched_mean_T(two, 50)
    ctx.add({"test": "mean-T50", "statistic": et, "pass": abs(et - 150.0) <= 1e-12 * 150.0, "n": 1}, True)


def suite_formula_mc(cfg, ctx):
    dist = cfg.dist()
    n = cfg.n_grid[0]
    depth = _p(cfg, "depth")
    rows = []
    ok = True
    for e in range(cfg.n_env):
        env = sample_env_P(dist, -depth, n + 5, cfg.seed * 1000 + e)
        T, _, _ = hitting_times(env, n, cfg.n_paths, cfg.seed, stream=("formula-mc", e))
        ctx.csv(f"T-env{e}.csv", "T", T, fmt="%d")
        T = T.astype(float)
        exact = quenched_mean_T(env, n)
        mom = crossing_second_moments(env, 0, n - 1, depth - 2)
        second = float(np.sum(mom.variance)) + exact ** 2
        # Standard errors from the exact variance of T and of T^2: sample
        # estimates miss rare long excursions to the left of 0.
        raw = hitting_time_moments(env, n, depth - 2, 4)
        sd1 = math.sqrt((raw[2] - raw[1] ** 2) / T.size)
        sd2 = math.sqrt((raw[4] - raw[2] ** 2) / T.size)
        z1 = (T.mean() - exact) / sd1
        t2 = T ** 2
        z2 = (t2.mean() - second) / sd2
        consistent = (abs(float(np.sum(mom.mean)) - exact) <= 1e-8 * exact
                      and abs(raw[1] - exact) <= 1e-8 * exact and abs(raw[2] - second) <= 1e-8 * second)
        passed = abs(z1) <= 3 and abs(z2) <= 3 and consistent
        ok &= passed
        rows.append((e, exact, T.mean(), z1, second, t2.mean(), z2))
        ctx.add({"test": f"formula-mc env {e}", "statistic": max(abs(z1), abs(z2)), "pass": passed,
                 "n": T.size, "z_mean": z1, "z_second": z2, "exact_mean": exact, "exact_second": second,
                 "sample_z_second": (t2.mean() - second) / (t2.std(ddof=1) / math.sqrt(T.size))})
    ctx.add({"test": "formula-mc all", "statistic": cfg.n_env, "pass": ok, "n": cfg.n_env}, True)
    path = ctx.artifact("moments.csv")
    if path:
        with open(path, "w") as fh:
            fh.write("env,exact_mean,mc_mean,z_mean,exact_second,mc_second,z_second\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) if i else str(v) for i, v in enumerate(r)) + "\n")


def _shifted(env, lo):
    return Environment(env.omega, env.left - lo, env.dist)


def suite_coupling(cfg, ctx):
    dist = cfg.dist()
    depth = _p(cfg, "depth")
    env = sample_env_Q(dist, -depth, 600, cfg.seed)
    nb = max(_p(cfg, "ks_blocks"), _p(cfg, "var_blocks"))
    blocks = ladder_locations(env, nb)
    locs = blocks.locations
    ks_ok = gof_ok = True
    for b in range(_p(cfg, "ks_blocks")):
        lo, hi = int(locs[b]), int(locs[b + 1])
        ex = excursion_decomposition(env, lo, hi, cfg.n_paths, cfg.seed, stream=("exc", b))
        T_direct, _, _ = hitting_times(_shifted(env, lo), hi - lo, cfg.n_paths, cfg.seed, stream=("direct", b))
        ctx.csv(f"block{b}.csv", "T_excursion,T_direct,N", ex.T, T_direct, ex.N, fmt="%d")
        r = ks_two_sample_test(ex.T, T_direct, name=f"excursion-vs-direct block {b}", seed=cfg.seed).to_dict()
        r.update({"lo": lo, "hi": hi, "p_success": ex.p})
        ctx.add(r)
        ks_ok &= r["pass"]
        g = geometric_gof_test(ex.N, ex.p, seed=cfg.seed).to_dict()
        g["test"] = f"geometric-N block {b}"
        ctx.add(g)
        gof_ok &= g["pass"]
    ctx.add({"test": "excursion law all blocks", "statistic": _p(cfg, "ks_blocks"), "pass": ks_ok,
             "n": _p(cfg, "ks_blocks")}, True)
    ctx.add({"test": "geometric N all blocks", "statistic": _p(cfg, "ks_blocks"), "pass": gof_ok,
             "n": _p(cfg, "ks_blocks")}, True)

    n_pass = 0
    nv = _p(cfg, "var_blocks")
    for b in range(nv):
        lo, hi = int(locs[b]), int(locs[b + 1])
        rep = coupling_variance_check(env, lo, hi, _p(cfg, "var_paths"), cfg.seed * 7919 + b)
        rep["p_success"] = rep.pop("p")
        rep.update({"test": f"variance-bound block {b}", "statistic": rep["lhs"] - rep["rhs"], "n": _p(cfg, "var_paths"),
                    "lo": lo, "hi": hi})
        ctx.add(rep)
        n_pass += rep["pass"]
    ctx.add({"test": "variance bound blocks passing", "statistic": n_pass, "pass": n_pass == nv, "n": nv}, True)

    n = cfg.n_grid[0]
    env_p = sample_env_P(dist, -depth, n + 5, cfg.seed + 1)
    env_q = couple_P_Q(env_p, cfg.seed + 1)
    runs = _p(cfg, "coupled_runs")
    out = coupled_pairs(env_p, env_q, n, runs, cfg.seed)
    ctx.csv("coupled-pairs.csv", "T,L,T_prime,L_prime", out, fmt="%d")
    dT = np.abs(out[:, 0] - out[:, 2])
    dL = np.abs(out[:, 1] - out[:, 3])
    ok = bool(np.all(dT == dL))
    ctx.add({"test": "coupled |dT| = |dL|", "statistic": int(np.sum(dT != dL)), "pass": ok, "n": runs,
             "max_dT": int(dT.max()), "mean_dT": float(dT.mean())}, True)


def suite_tail(cfg, ctx):
    ok = True
    for k in _p(cfg, "kappas"):
        dist = EnvDistribution.from_config(_ref(k))
        te, _ = _tail_estimate(dist, cfg.n_env, cfg.seed, ctx)
        kap = solve_kappa(dist).kappa
        passed = abs(te.kappa_hat - kap) <= _p(cfg, "tol")
        ok &= passed
        ctx.add({"test": f"hill kappa={k}", "statistic": te.kappa_hat, "pass": passed, "n": te.n,
                 "kappa": kap, **{f"tail_{a}": b for a, b in te.to_dict().items()}}, True)


def _pp_setup(cfg, ctx):
    dist = cfg.dist()
    te, _ = _tail_estimate(dist, _p(cfg, "tail_samples"), cfg.seed, ctx)
    n = cfg.n_grid[0]
    betas = sample_q_betas(dist, cfg.n_env, n, cfg.seed, stream="blocks")
    return dist, te, n, betas


def suite_point_process(cfg, ctx):
    dist, te, n, betas = _pp_setup(cfg, ctx)
    kap = solve_kappa(dist).kappa
    procs = [extract_Nn(row, n, kap) for row in betas]
    c1 = np.array([count_above(pp, 1.0) for pp in procs])
    c2 = np.array([count_above(pp, 2.0) for pp in procs])
    mid = c1 - c2
    mean0 = te.lam_hat / te.kappa_hat
    rep = poisson_dispersion_test(c1, mean0, seed=cfg.seed, mean_tol=_p(cfg, "mean_tol")).to_dict()
    rep.update({"test": "count_above(1) Poisson", "lam_hat": te.lam_hat, "kappa_hat": te.kappa_hat,
                "mean_known_kappa": te.C_known})
    ctx.add(rep, True)
    corr = float(np.corrcoef(mid, c2)[0, 1])
    ctx.add({"test": "corr (1,2] vs (2,inf)", "statistic": corr, "pass": abs(corr) < _p(cfg, "corr_tol"),
             "n": len(c1)}, True)
    lam = te.lam_hat
    ctx.add(chi2_independence_poisson(mid, c2, lam * (1 - 2 ** -kap) / kap, lam * 2 ** -kap / kap,
                                      seed=cfg.seed).to_dict())
    path = ctx.artifact("counts.csv")
    if path:
        np.savetxt(path, np.column_stack([c1, mid, c2]), fmt="%d", delimiter=",", header="above1,mid,above2")


def suite_weak_quenched(cfg, ctx):
    dist, te, n, betas = _pp_setup(cfg, ctx)
    kap = solve_kappa(dist).kappa
    lam = te.lam_hat
    eps_min = cfg.eps_min or floor_for(lam, kap, _p(cfg, "poisson_points"))
    m = cfg.n_env
    emp = np.array([sum_squares(extract_Nn(row, n, kap)) for row in betas])
    pois = []
    for r in range(m):
        pp = sample_poisson_Nlk(lam, kap, eps_min, cfg.seed, realization=r)
        s, bias = sum_squares(pp, with_bias=True)
        pois.append(s + bias)
    pois = np.array(pois)
    rep = ks_two_sample_test(emp, pois, name="sum_squares N_n vs Poisson", seed=cfg.seed).to_dict()
    rep.update({"eps_min": eps_min, "lam_hat": lam})
    ctx.add(rep, True)

    x = _p(cfg, "threshold")
    lump = floor_for(lam, kap, _p(cfg, "exact_atoms"))
    inner = cfg.n_paths
    pe, se_e, pq, se_q = [], [], [], []
    for e, row in enumerate(betas):
        ms = make_sampler(extract_Nn(row, n, kap), HBAR, lump_below=lump)
        v, s = tail_prob(ms, x, inner, cfg.seed, stream=("wq-env", e))
        pe.append(v)
        se_e.append(s)
    for r in range(m):
        pp = sample_poisson_Nlk(lam, kap, eps_min, cfg.seed, realization=r)
        ms = make_sampler(pp, HBAR, lump_below=lump)
        v, s = tail_prob(ms, x, inner, cfg.seed, stream=("wq-pois", r))
        pq.append(v)
        se_q.append(s)
    rep = ks_two_sample_test(pe, pq, name=f"P(Hbar draw > {x}) across realizations", seed=cfg.seed).to_dict()
    rep.update({"inner": inner, "mean_se_env": float(np.mean(se_e)), "mean_se_poisson": float(np.mean(se_q)),
                "lump_below": lump})
    ctx.add(rep, True)
    path = ctx.artifact("realizations.csv")
    if path:
        np.savetxt(path, np.column_stack([emp, pois, pe, pq]), delimiter=",",
                   header="sumsq_env,sumsq_poisson,tail_env,tail_poisson")


def suite_stability(cfg, ctx):
    ok = True
    for k in _p(cfg, "kappas"):
        for nf in _p(cfg, "n_folds"):
            rep, a, b = stability_convolution_check(k, _p(cfg, "lam"), nf, cfg.n_paths, cfg.seed,
                                                    n_points=_p(cfg, "points"), return_samples=True)
            ctx.csv(f"k{k:g}-n{nf}.csv", "sum_of_n,scaled_single", a, b)
            ok &= rep["pass"]
            ctx.add(rep)
    ctx.add({"test": "stability all", "statistic": len(_p(cfg, "kappas")) * len(_p(cfg, "n_folds")), "pass": ok,
             "n": cfg.n_paths}, True)


def suite_averaged(cfg, ctx):
    dist, te4, n, betas = _pp_setup(cfg, ctx)
    kap = solve_kappa(dist).kappa
    beta_bar = mean_ladder_length(dist) / speed(dist)
    S = (betas.sum(axis=1) - n * beta_bar) / n ** (1.0 / kap)
    # Tail constant from the pooled betas of this run: same default Hill rule,
    # but the threshold now sits at the scale probed by the n^(1/kappa) normalisation.
    te = estimate_tail(betas.ravel(), kappa_known=kap, n_boot=0)
    b = (te.lam_hat / kap) ** (1.0 / kap)
    d = ks_distance(S, lambda x: stable_cdf(kap, b, x))
    ctx.add({"test": "centered beta sums vs stable", "statistic": d, "pass": d < _p(cfg, "ks_tol"), "n": S.size,
             "b": b, "beta_bar": beta_bar, "lam_hat": te.lam_hat, "kappa_hat": te.kappa_hat, "k": te.k,
             "pooled_betas": te.n}, True)
    for label, C in (("exact-kappa pooled constant", te.C_known), ("tail-suite constant", te4.lam_hat / kap)):
        bk = C ** (1.0 / kap)
        ctx.add({"test": f"centered beta sums vs stable ({label})",
                 "statistic": ks_distance(S, lambda x: stable_cdf(kap, bk, x)), "n": S.size, "b": bk})

    sdist = EnvDistribution.from_config(_p(cfg, "self_similar_family"))
    sk = solve_kappa(sdist).kappa
    m = _p(cfg, "self_similar_n")
    ns = _p(cfg, "self_similar_samples")
    a = annealed_hitting_times_fast(sdist, m, ns, cfg.seed) / m ** (1.0 / sk)
    b2 = annealed_hitting_times_fast(sdist, 2 * m, ns, cfg.seed) / (2 * m) ** (1.0 / sk)
    rep = ks_two_sample_test(a, b2, name=f"self-similarity T_n kappa={sk:g}", seed=cfg.seed).to_dict()
    ctx.add(rep, True)
    ctx.csv("sums.csv", "centered_scaled_sum", S)
    ctx.csv("self-similarity.csv", "T_n_scaled,T_2n_scaled", a, b2)


def time_space_convert(X, XS=None, mode: int = 3, kappa: float = 1.5, n: int = 1, vp: float | None = None,
                       delta: float | None = None, T_hits=None) -> EmpiricalDistribution:
    """Normalised walk positions for the three regimes.

    mode 1: ``X_n / n^kappa``; mode 2: ``(X_n - delta(n)) / (n / log(n)^2)``;
    mode 3: ``(X_n - n vp) / n^(1/kappa)``.  When running maxima and hitting
    times are supplied, ``{X*_n >= x} == {T_x <= n}`` is asserted per path.
    """
    X = np.asarray(X, dtype=float)
    if T_hits is not None and XS is not None:
        for xs, th in zip(XS, T_hits):
            xs = int(xs)
            if not (th[xs] <= n and (xs + 1 >= len(th) or th[xs + 1] > n)):
                raise AssertionError("event identity violated")
    if mode == 1:
        if not 0 < kappa < 1:
            raise ValueError("mode 1 needs kappa in (0, 1)")
        return EmpiricalDistribution(X / n ** kappa)
    if mode == 2:
        if delta is None:
            raise ValueError("mode 2 needs delta(n)")
        return EmpiricalDistribution((X - delta) / (n / math.log(n) ** 2))
    if mode == 3:
        if not 1 < kappa < 2 or vp is None:
            raise ValueError("mode 3 needs kappa in (1, 2) and vp")
        return EmpiricalDistribution((X - n * vp) / n ** (1.0 / kappa))
    raise ValueError("mode must be 1, 2 or 3")


def solve_delta(n: int, D) -> float:
    """Root of ``delta D(delta) = n`` for an increasing callable ``D``."""
    from scipy.optimize import brentq

    f = lambda d: d * D(d) - n  # noqa: E731
    hi = float(n)
    while f(hi) < 0:
        hi *= 2
    return brentq(f, 1e-9, hi, xtol=1e-9)


def suite_time_space(cfg, ctx):
    dist = cfg.dist()
    depth = _p(cfg, "depth")
    target = _p(cfg, "identity_target")
    env = sample_env_P(dist, -depth, target + 5, cfg.seed)
    n_id = _p(cfg, "identity_paths")
    cps = np.unique(np.round(np.geomspace(1, 50 * target, 60)).astype(np.int64))
    bad = 0
    for k in range(n_id):
        s = run_to_hit(env, target, cfg.seed, path_id=k, checkpoints=cps)
        bad += not s.event_identity_holds()
    ctx.add({"test": "event identity", "statistic": bad, "pass": bad == 0, "n": n_id}, True)

    bdist = EnvDistribution.from_config(_p(cfg, "backtrack_family"))
    stats_ = []
    for t in cfg.n_grid:
        X, XS = annealed_positions(bdist, [t], _p(cfg, "backtrack_paths"), cfg.seed, depth=depth,
                                   stream=("backtrack", t))
        stats_.append(float(np.max(XS[:, 0] - X[:, 0]) / math.log(t)))
        ctx.csv(f"backtrack-n{t}.csv", "X,Xstar", X[:, 0], XS[:, 0], fmt="%d")
    K = stats_[0] * (1 + _p(cfg, "trend_tol"))
    ok = all(s <= K for s in stats_[1:])
    ctx.add({"test": "backtracking (X*-X)/log n", "statistic": stats_[-1], "pass": ok, "n": _p(cfg, "backtrack_paths"),
             "by_n": stats_, "fitted_K": K}, True)

    # quenched left side vs transformed T-side limit
    kap = solve_kappa(dist).kappa
    vp = speed(dist)
    nu_bar = mean_ladder_length(dist)
    t = _p(cfg, "time")
    x = _p(cfg, "x")
    inner = cfg.n_paths
    left = []
    for e in range(cfg.n_env):
        env_e = sample_env_P(dist, -depth, t + 10, cfg.seed * 1000 + e)
        X, XS = positions(env_e, [t], inner, cfg.seed, stream=("ts", e))
        z = time_space_convert(X[:, 0], mode=3, kappa=kap, n=t, vp=vp).values
        left.append(float(np.mean(z < x)))
    pooled = sample_q_betas(dist, _p(cfg, "tail_envs"), _p(cfg, "tail_blocks"), cfg.seed, stream="ts-tail")
    te = estimate_tail(pooled.ravel(), kappa_known=kap, n_boot=0)
    del pooled
    lam_T = te.lam_hat / nu_bar
    eps_min = floor_for(lam_T, kap, _p(cfg, "poisson_points"))
    thr = -x * vp ** (-1.0 - 1.0 / kap)
    right = []
    for r in range(cfg.n_env):
        pp = sample_poisson_Nlk(lam_T, kap, eps_min, cfg.seed, realization=r, stream="ts-poisson")
        ms = averaged_limit_sampler(pp)
        right.append(float(np.mean(draw_array(ms, inner, cfg.seed, stream=("ts-draw", r)) > thr)))
    ctx.csv("case3.csv", "left_fraction,right_fraction", left, right)
    rep = ks_two_sample_test(left, right, name="position law vs transformed limit", seed=cfg.seed).to_dict()
    rep.update({"x": x, "threshold": thr, "lam_T": lam_T, "kappa_hat": te.kappa_hat, "vp": vp, "time": t,
                "inner": inner, "mean_left": float(np.mean(left)), "mean_right": float(np.mean(right))})
    ctx.add(rep, True)


def suite_smoke(cfg, ctx):
    """Tiny end-to-end pass through every module."""
    small = {
        "exact": dict(params={"n_intervals": 50, "ruin_max": 12}),
        "formula-mc": dict(n_grid=[10], n_env=2, n_paths=2000),
        "coupling": dict(n_grid=[30], n_paths=500,
                         params={"ks_blocks": 2, "var_blocks": 2, "var_paths": 1000, "coupled_runs": 200,
                                 "depth": 200}),
        "tail": dict(n_env=40_000),
        "point-process": dict(n_grid=[2000], n_env=200, params={"tail_samples": 40_000}),
        "stability": dict(n_paths=500, params={"kappas": [0.75, 1.5], "n_folds": [2], "points": 200}),
    }
    for exp, over in small.items():
        sub = default_config(exp, cfg.seed, **over)
        sub_ctx = _Context(sub)
        SUITES[exp](sub, sub_ctx)
        for r in sub_ctx.reports:
            r = dict(r)
            r.pop("criterion", None)
            # verdicts at toy sizes are informational only
            r["small_sample_pass"] = r.pop("pass", None)
            r["test"] = f"{exp}: {r['test']}"
            ctx.add(r)


SUITES = {
    "exact": suite_exact,
    "formula-mc": suite_formula_mc,
    "coupling": suite_coupling,
    "tail": suite_tail,
    "point-process": suite_point_process,
    "weak-quenched": suite_weak_quenched,
    "stability": suite_stability,
    "averaged": suite_averaged,
    "time-space": suite_time_space,
    "smoke": suite_smoke,
}


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    start = time.perf_counter()
    ctx = _Context(cfg)
    with thread_scope(cfg.threads):
        try:
            SUITES[cfg.experiment](cfg, ctx)
        except Exception as exc:
            raise RuntimeError(f"experiment {cfg.experiment!r} failed: {exc}") from exc
    rec = RunRecord(cfg.hash(), __version__, ctx.reports, time.perf_counter() - start, ctx.artifacts)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        path = os.path.join(cfg.out, f"{cfg.experiment}-record.json")
        with open(path, "w") as fh:
            json.dump(rec.to_dict(), fh, indent=2, sort_keys=True)
        rec.artifacts.append(path)
    return rec
