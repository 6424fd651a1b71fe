"""Command line interface: ``rwrelab <subcommand> [--seed S] [--threads T] [--out DIR]``."""
from __future__ import annotations

import glob
import json
import os
import sys

import click
import numpy as np

from .env_core import EnvDistribution, sample_env_P, sample_env_Q, solve_kappa
from .harness import CRITERIA, EXPERIMENTS, ExperimentConfig, default_config, run_experiment
from .parallel import threads as thread_scope


def common(f):
    f = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--threads", type=int, default=None, help="Numba thread count.")(f)
    f = click.option("--seed", type=int, default=20261016, show_default=True, help="Master seed.")(f)
    return f


def family_option(f):
    return click.option("--family", default='{"family": "reference", "kappa": 0.75}', show_default=True,
                        help="Environment law as JSON.")(f)


def _dist(family: str) -> EnvDistribution:
    return EnvDistribution.from_config(json.loads(family))


def _emit(obj, out, name):
    text = json.dumps(obj, indent=2, sort_keys=True, default=float)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, name), "w") as fh:
            fh.write(text + "\n")
    click.echo(text)


@click.group()
def main():
    """Simulation and verification toolkit for one-dimensional random walks in random environment."""


@main.command()
@common
@family_option
@click.option("--left", type=int, default=-200, show_default=True)
@click.option("--right", type=int, default=1000, show_default=True)
@click.option("--q", "q_law", is_flag=True, help="Sample under the conditioned law Q.")
def env(seed, threads, out, family, left, right, q_law):
    """Generate an environment window and print a summary."""
    dist = _dist(family)
    e = sample_env_Q(dist, left, right, seed) if q_law else sample_env_P(dist, left, right, seed)
    if out:
        os.makedirs(out, exist_ok=True)
        e.save_csv(os.path.join(out, "environment.csv"))
    _emit({"left": e.left, "right": e.right, "q_conditioned": e.q_conditioned, "mean_omega": float(e.omega.mean()),
           "mean_log_rho": float(e.log_rho.mean())}, None, "")


@main.command()
@common
@family_option
def kappa(seed, threads, out, family):
    """Solve E[rho^kappa] = 1 for the given law."""
    from .env_core import mean_ladder_length, speed

    dist = _dist(family)
    sol = solve_kappa(dist)
    res = {"kappa": sol.kappa, "lattice": dist.is_lattice(), "speed": speed(dist)}
    if dist.family != "uniform":
        res["mean_ladder_length"] = mean_ladder_length(dist)
    _emit(res, out, "kappa.json")


@main.command()
@common
@family_option
@click.option("--target", type=int, default=1000, show_default=True)
@click.option("--paths", type=int, default=1000, show_default=True)
@click.option("--annealed", is_flag=True, help="Fresh environment per sample.")
def simulate(seed, threads, out, family, target, paths, annealed):
    """Hitting times of ``target`` (quenched on one environment, or annealed)."""
    from .walk import annealed_hitting_times_fast, hitting_times

    dist = _dist(family)
    with thread_scope(threads):
        if annealed:
            T = annealed_hitting_times_fast(dist, target, paths, seed)
        else:
            e = sample_env_P(dist, -400, target + 5, seed)
            T = hitting_times(e, target, paths, seed)[0]
    if out:
        os.makedirs(out, exist_ok=True)
        np.savetxt(os.path.join(out, "hitting_times.csv"), T, fmt="%d", header="T")
    q = np.quantile(T, [0.1, 0.5, 0.9])
    _emit({"target": target, "paths": paths, "mean": float(np.mean(T)), "q10": q[0], "median": q[1], "q90": q[2]},
          None, "")


@main.command()
@common
@family_option
@click.option("--envs", type=int, default=100_000, show_default=True, help="Independent Q-environments.")
@click.option("--blocks", type=int, default=1, show_default=True)
@click.option("--k", type=int, default=None, help="Hill order-statistic count.")
def ladder(seed, threads, out, family, envs, blocks, k):
    """Sample betas under Q and estimate their tail."""
    from .ladder import estimate_tail, sample_q_betas, save_betas_csv

    dist = _dist(family)
    with thread_scope(threads):
        b = sample_q_betas(dist, envs, blocks, seed)
    te = estimate_tail(b.ravel(), k=k, kappa_known=solve_kappa(dist).kappa, seed=seed)
    if out:
        os.makedirs(out, exist_ok=True)
        save_betas_csv(os.path.join(out, "betas.csv"), b, {"family": dist.to_config(), "seed": seed})
    _emit(te.to_dict(), out, "tail.json")


@main.command()
@common
@click.option("--lam", type=float, required=True)
@click.option("--kappa", "kap", type=float, required=True)
@click.option("--eps-min", type=float, default=1e-3, show_default=True)
def pp(seed, threads, out, lam, kap, eps_min):
    """Sample the Poisson process with intensity lam x^(-kappa-1) above eps-min."""
    from .point_process import count_above, sample_poisson_Nlk

    p = sample_poisson_Nlk(lam, kap, eps_min, seed)
    if out:
        os.makedirs(out, exist_ok=True)
        p.save_csv(os.path.join(out, "points.csv"))
    _emit({"points": len(p), "above_1": count_above(p, 1.0) if eps_min < 1 else None,
           "largest": float(p.atoms[0]) if len(p) else None}, None, "")


@main.command()
@common
@click.option("--lam", type=float, required=True)
@click.option("--kappa", "kap", type=float, required=True)
@click.option("--mode", type=click.Choice(["Hbar", "H", "limit"]), default="Hbar", show_default=True)
@click.option("--draws", type=int, default=10_000, show_default=True)
@click.option("--points", type=float, default=2000.0, show_default=True, help="Expected atoms kept exactly.")
def limit(seed, threads, out, lam, kap, mode, draws, points):
    """Draws from the random measure built on one Poisson realization."""
    from .limit_laws import HBAR, averaged_limit_sampler, draw_array, floor_for, make_sampler
    from .point_process import sample_poisson_Nlk

    p = sample_poisson_Nlk(lam, kap, floor_for(lam, kap, points), seed)
    ms = averaged_limit_sampler(p) if mode == "limit" else make_sampler(p, HBAR if mode == "Hbar" else mode)
    with thread_scope(threads):
        x = draw_array(ms, draws, seed)
    if out:
        os.makedirs(out, exist_ok=True)
        np.savetxt(os.path.join(out, "draws.csv"), x, header="draw")
    q = np.quantile(x, [0.1, 0.5, 0.9])
    _emit({"mode": mode, "draws": draws, "mean": float(x.mean()), "q10": q[0], "median": q[1], "q90": q[2]},
          None, "")


@main.command()
@common
@click.argument("experiment")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON experiment config; overrides the built-in defaults.")
def verify(seed, threads, out, experiment, config_path):
    """Run an acceptance experiment by id (name or criterion number 1-9)."""
    if experiment.isdigit():
        experiment = CRITERIA.get(int(experiment), experiment)
    if config_path:
        cfg = ExperimentConfig.load(config_path)
        cfg.out = out or cfg.out
        cfg.threads = threads if threads is not None else cfg.threads
    else:
        if experiment not in EXPERIMENTS:
            raise click.BadParameter(f"choose from {', '.join(EXPERIMENTS)}", param_hint="EXPERIMENT")
        cfg = default_config(experiment, seed, out=out, threads=threads)
    rec = run_experiment(cfg)
    click.echo(rec.summary())
    click.echo(f"wall time {rec.wall_time:.1f}s  hash {rec.hash()[:16]}")
    sys.exit(0 if rec.passed else 1)


@main.command()
@common
@click.argument("paths", nargs=-1)
def report(seed, threads, out, paths):
    """Aggregate run records (JSON files or directories) into one summary."""
    files = []
    for p in paths or ["."]:
        files += sorted(glob.glob(os.path.join(p, "*-record.json"))) if os.path.isdir(p) else [p]
    rows = []
    for f in files:
        with open(f) as fh:
            rec = json.load(fh)
        crit = [r for r in rec["reports"] if r.get("criterion")]
        rows.append({"file": f, "hash": rec["hash"], "wall_time": rec["wall_time"],
                     "passed": all(r.get("pass", True) for r in crit),
                     "criteria": [{"test": r["test"], "pass": r.get("pass")} for r in crit]})
    _emit({"records": rows, "all_passed": all(r["passed"] for r in rows)}, out, "report.json")


if __name__ == "__main__":
    main()
