"""Command-line front end: scans, solves, rate evaluation, cross-checks.

Usage:  spdelab <command> [--config FILE] [--set key=value ...] [--seed N]
        [--out DIR]

Every command writes CSV tables plus a summary.json (config echo, root
seed, output content hashes, wall time) into the output directory.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import experiments, models
from .control import (Control, MeanShiftEvent, center_control, control_energy,
                      minimize_rate, rate_density, solve_controlled)
from .metrics import (MeasurePath, MetricParams, cdf_to_measure,
                      cdf_to_probability, sandwich_constants,
                      weak_test_dictionary)
from .noise import NoiseStream
from .particles import simulate_fv_moran, simulate_sbm_particles
from .solver import deterministic_limit, solve_spde
from .tables import write_csv, write_run_summary

COMMANDS = ("simulate", "rate", "minimize", "ldp-scan", "convergence",
            "particles", "kolmogorov", "compare", "metrics")


def _parse_args(argv):
    ap = argparse.ArgumentParser(prog="spdelab", description=__doc__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="config file (flat key = value lines)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    ap.add_argument("--seed", type=int, help="override noise.seed")
    ap.add_argument("--out", help="override experiment.out")
    return ap.parse_args(argv)


def _load(args) -> dict:
    cfg = cfgmod.load_config(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg[key.strip()] = cfgmod.parse_value(raw)
    if args.seed is not None:
        cfg["noise.seed"] = args.seed
    if args.out is not None:
        cfg["experiment.out"] = args.out
    return cfg


def _out_dir(cfg, command) -> Path:
    return Path(cfg.get("experiment.out", f"runs/{command}"))


def _control_from_config(cfg, grid) -> Control:
    amp = float(cfg.get("control.amplitude", 1.0))
    center = float(cfg.get("control.center", 0.0))
    width = float(cfg.get("control.width", 0.25))
    profile = cfg.get("control.time_profile", "constant")

    def h(s, a):
        base = amp * np.exp(-((a - center) / width) ** 2)
        if profile == "cosine":
            return base * (1.0 + 0.5 * np.cos(np.pi * s))
        return base * np.ones_like(s)

    return Control.from_function(h, grid)


def cmd_simulate(cfg, out):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg, model)
    seed = cfgmod.root_seed(cfg)
    theta = math.sqrt(model.epsilon)
    if theta > 0:
        path = solve_spde(model, theta, None, NoiseStream(seed, 0), grid)
    else:
        path = deterministic_limit(model, grid)
    stride = max(1, grid.nt // int(cfg.get("experiment.snapshots", 10)))
    rows = [{"t": grid.times[n], "y": grid.y[j], "u": path.values[n, j]}
            for n in range(0, grid.nt + 1, stride) for j in range(grid.ny)]
    files = [write_csv(out / "path.csv", rows, ["t", "y", "u"])]
    print(f"simulate: {len(rows)} samples, projection L1 = "
          f"{path.diagnostics.projection_l1:.3g}")
    return files


def cmd_rate(cfg, out):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg, model)
    h = _control_from_config(cfg, grid)
    if model.kind == models.FVP and cfg.get("control.centered", True):
        h = center_control(h)
    path = solve_controlled(model, h, grid)
    mpath = MeasurePath.from_cdf_path(path, kind=model.kind)
    report = rate_density(mpath, model.kind, floor=float(cfg.get("rate.floor", 1e-8)))
    report.i_energy = control_energy(h)
    gap = abs(report.i_density - report.i_energy) / max(report.i_energy, 1e-2)
    rows = [{"i_energy": report.i_energy, "i_density": report.i_density,
             "relative_gap": gap, "floor_mass": report.floor_mass}]
    files = [write_csv(out / "rate_report.csv", rows)]
    hrows = [{"t": grid.times[n], "a": grid.a_mid[k], "h": h.values[n, k]}
             for n in range(grid.nt) for k in range(grid.na)]
    files.append(write_csv(out / "control.csv", hrows, ["t", "a", "h"]))
    print(f"rate: energy {report.i_energy:.6g}, density form {report.i_density:.6g}, "
          f"relative gap {gap:.3%}")
    return files


def cmd_minimize(cfg, out):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg, model)
    event = MeanShiftEvent(float(cfg.get("event.delta", 0.25)),
                           cfg.get("event.direction", "up"))
    res = minimize_rate(
        model, event, grid,
        penalty0=float(cfg.get("minimize.penalty0", 1e3)),
        penalty_growth=float(cfg.get("minimize.penalty_growth", 10.0)),
        rounds=int(cfg.get("minimize.rounds", 3)),
        max_iter=int(cfg.get("minimize.max_iter", 200)))
    files = [
        write_csv(out / "trace.csv",
                  [{"iteration": i, "objective": o, "energy": e, "violation": v}
                   for i, o, e, v in res.trace],
                  ["iteration", "objective", "energy", "violation"]),
        write_csv(out / "control.csv",
                  [{"t": grid.times[n], "a": grid.a_mid[k], "h": res.control.values[n, k]}
                   for n in range(grid.nt) for k in range(grid.na)],
                  ["t", "a", "h"]),
        write_csv(out / "report.csv",
                  [{"i_energy": res.report.i_energy, "i_density": res.report.i_density,
                    "violation": res.violation, "converged": res.converged}]),
    ]
    print(f"minimize: I* = {res.report.i_energy:.6g} "
          f"(violation {res.violation:.3g}, converged={res.converged})")
    return files


def cmd_ldp_scan(cfg, out):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg, model)
    result = experiments.run_ldp_scan(
        model, grid,
        cfgmod.as_list(cfg.get("experiment.epsilons", [0.1, 0.05, 0.025])),
        cfgmod.as_list(cfg.get("experiment.deltas", [0.1, 0.2])),
        int(cfg.get("experiment.realizations", 2000)),
        cfgmod.root_seed(cfg),
        statistic=cfg.get("experiment.statistic", "weighted-sup"),
        direction=cfg.get("experiment.direction", "both"),
        beta=float(cfg.get("experiment.beta", 1.0)))
    files = [write_csv(out / "ldp_scan.csv", result.rows,
                       ["epsilon", "delta", "p_hat", "wilson_lo", "wilson_hi",
                        "exponent", "feasible"])]
    for delta, spread in sorted(result.stabilization.items()):
        print(f"ldp-scan: delta={delta:g} exponent spread {spread:.3g}")
    return files


def cmd_convergence(cfg, out):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg, model)
    result = experiments.run_convergence_scan(
        model, grid,
        cfgmod.as_list(cfg.get("experiment.epsilons", [0.1, 0.03, 0.01, 0.003])),
        int(cfg.get("experiment.realizations", 200)),
        cfgmod.root_seed(cfg),
        functional=cfg.get("experiment.functional", "weighted-sup"),
        beta=float(cfg.get("experiment.beta", 1.0)))
    files = [write_csv(out / "convergence.csv", result.rows,
                       ["epsilon", "mean_sq_dev", "std_err", "realizations"])]
    lo, hi = result.slope_ci95
    print(f"convergence: slope {result.slope:.3f} (95% CI {lo:.3f}..{hi:.3f})")
    return files


def cmd_particles(cfg, out):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg, model)
    seed = cfgmod.root_seed(cfg)
    f0 = models.initial_field(model, grid)
    if model.kind == models.SBM:
        mu0 = cdf_to_measure(f0)
        mp = simulate_sbm_particles(
            mu0, model.epsilon, NoiseStream(seed, 0), grid,
            branching_rate=float(cfg.get("experiment.branching_rate", 1.0)))
    else:
        mu0 = cdf_to_probability(f0)
        mp = simulate_fv_moran(mu0, model.epsilon, NoiseStream(seed, 0), grid)
    stride = max(1, grid.nt // int(cfg.get("experiment.snapshots", 10)))
    rows = []
    for n in range(0, grid.nt + 1, stride):
        mu = mp.measure_at(n)
        rows.extend({"t": grid.times[n], "position": p, "mass": m}
                    for p, m in zip(mu.positions, mu.masses))
    files = [write_csv(out / "particles.csv", rows, ["t", "position", "mass"])]
    print(f"particles: terminal mass {mp.mass(grid.nt):.6g}, "
          f"{len(mp.measure_at(grid.nt).positions)} particles")
    return files


def cmd_kolmogorov(cfg, out):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg, model)
    result = experiments.kolmogorov_fit(
        model, grid,
        int(cfg.get("experiment.realizations", 200)),
        cfgmod.root_seed(cfg),
        theta=math.sqrt(float(cfg.get("model.epsilon", 1.0))),
        n_moment=int(cfg.get("experiment.n_moment", 4)),
        n_pairs=int(cfg.get("experiment.pairs", 150)),
        beta1=float(cfg.get("metrics.beta1", 0.75)))
    files = [write_csv(out / "pairs.csv", result.pairs,
                       ["t1", "y1", "t2", "y2", "distance", "moment"]),
             write_csv(out / "fit.csv",
                       [{"exponent": result.exponent, "q_hat": result.q_hat,
                         "r2": result.r2, "slope_se": result.slope_se}])]
    print(f"kolmogorov: exponent {result.exponent:.3f} (q = {result.q_hat:.3f}), "
          f"R^2 = {result.r2:.3f}")
    return files


def cmd_compare(cfg, out):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg, model)
    result = experiments.compare_particles_spde(
        model, grid,
        cfgmod.as_list(cfg.get("experiment.epsilons", [0.1, 0.05])),
        int(cfg.get("experiment.realizations", 500)),
        cfgmod.root_seed(cfg),
        times=tuple(cfgmod.as_list(cfg.get("experiment.times", [0.25, 0.5, 1.0]))),
        branching_rate=float(cfg.get("experiment.branching_rate", 1.0)))
    files = [write_csv(out / "compare.csv", result.rows,
                       ["epsilon", "time", "function", "mean_spde", "mean_particles",
                        "z_mean", "var_spde", "var_particles", "z_var"])]
    print(f"compare: max |z| = {result.max_abs_z:.2f} "
          f"({'all within 3' if result.all_within else 'MISMATCH'})")
    return files


def cmd_metrics(cfg, out):
    params = MetricParams(
        alpha=float(cfg.get("metrics.alpha", 0.4)),
        beta=float(cfg.get("metrics.beta", 1.0)),
        beta0=float(cfg.get("metrics.beta0", 0.5)),
        beta1=float(cfg.get("metrics.beta1", 0.75)),
        m_max=int(cfg.get("metrics.m_max", 16)))
    betas = cfgmod.as_list(cfg.get("experiment.betas", [0.5, 1.0, 2.0]))
    rows = []
    for b in betas:
        c0, c1 = sandwich_constants(float(b))
        rows.append({"beta": float(b), "c0": c0, "C0": c1, "ratio": c1 / c0,
                     "bound": math.exp(2 * float(b))})
    files = [write_csv(out / "sandwich.csv", rows,
                       ["beta", "c0", "C0", "ratio", "bound"]),
             write_csv(out / "dictionary.csv",
                       [{"index": i, "name": name}
                        for i, (name, _) in enumerate(weak_test_dictionary())],
                       ["index", "name"])]
    print(f"metrics: alpha={params.alpha}, beta={params.beta}; "
          f"{len(rows)} sandwich rows")
    return files


_DISPATCH = {
    "simulate": cmd_simulate,
    "rate": cmd_rate,
    "minimize": cmd_minimize,
    "ldp-scan": cmd_ldp_scan,
    "convergence": cmd_convergence,
    "particles": cmd_particles,
    "kolmogorov": cmd_kolmogorov,
    "compare": cmd_compare,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = _parse_args(sys.argv[1:] if argv is None else argv)
    cfg = _load(args)
    out = _out_dir(cfg, args.command)
    started = time.time()
    files = _DISPATCH[args.command](cfg, out)
    write_run_summary(out, args.command, cfg, cfgmod.root_seed(cfg), files, started)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
