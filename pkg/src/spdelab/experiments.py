"""Verification campaigns over the solvers and particle systems.

Every scan is driven by (model, grid, root seed) and is bit-reproducible:
realization r of ladder entry b uses the deterministic stream index
b * realizations + r, and all aggregation is order-independent.  Crude
Monte Carlo only: rare-event rows are emitted when the feasibility guard
p_hat * R >= 10 holds, and acceptance of exponents is bracket-based
against the variational bound rather than against unreachable limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import models
from .control import (Control, MeanShiftEvent, MinimizeResult, minimize_rate,
                      terminal_mean_vector)
from .grid import Grid, PathField
from .metrics import (MeasurePath, MetricParams, cdf_to_measure,
                      cdf_to_probability, metric_d, weak_test_dictionary)
from .noise import NoiseStream
from .particles import simulate_fv_moran, simulate_sbm_particles
from .solver import deterministic_limit, solve_spde, solve_spde_batch

Z95 = 1.959963984540054


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple:
    """Wilson 95% score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials ** 2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _ols_loglog(x: np.ndarray, y: np.ndarray) -> tuple:
    """Slope, intercept, slope standard error, R^2 of log y on log x."""
    lx, ly = np.log(x), np.log(y)
    n = len(lx)
    a = np.vstack([lx, np.ones(n)]).T
    coef, res, *_ = np.linalg.lstsq(a, ly, rcond=None)
    fit = a @ coef
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    se = math.sqrt(ss_res / max(n - 2, 1) / float(np.sum((lx - lx.mean()) ** 2)))
    return float(coef[0]), float(coef[1]), se, r2


def _block_indices(block: int, realizations: int):
    start = block * realizations
    return range(start, start + realizations)


# ---------------------------------------------------------------------------
# deviation scaling

@dataclass
class ConvergenceResult:
    rows: list                 # dicts: epsilon, mean_sq_dev, std_err, realizations
    slope: float
    slope_se: float
    functional: str

    @property
    def slope_ci95(self) -> tuple:
        return (self.slope - Z95 * self.slope_se, self.slope + Z95 * self.slope_se)


def _path_deviations(model, grid, theta, root_seed, indices, u0, functional,
                     beta, params) -> np.ndarray:
    if functional == "weighted-sup":
        res = solve_spde_batch(model, theta, grid, root_seed, indices,
                               reference=u0, beta=beta)
        return res.sup_weighted_dev
    if functional == "metric":
        p = params or MetricParams(beta=beta)
        out = np.empty(len(list(indices)))
        for i, idx in enumerate(indices):
            path = solve_spde(model, theta, None, NoiseStream(root_seed, idx), grid)
            out[i] = max(metric_d(path.slice_at(n), u0.slice_at(n), p)
                         for n in range(0, grid.nt + 1))
        return out
    raise ValueError(f"unknown deviation functional {functional!r}")


def run_convergence_scan(model, grid: Grid, epsilons, realizations: int,
                         root_seed: int, *, functional: str = "weighted-sup",
                         beta: float = 1.0,
                         params: Optional[MetricParams] = None) -> ConvergenceResult:
    """Mean squared path deviation from the deterministic limit against eps.

    The deviation functional is the weighted sup |e^{-beta|y|}(u - u0)|
    over the whole path by default; the full Hölder-series metric is
    available as functional="metric" (slow, small runs only).  Reports a
    log-log regression slope, which the small-noise scaling pins at 1.
    """
    epsilons = [float(e) for e in epsilons]
    u0 = deterministic_limit(model, grid)
    rows = []
    for b, eps in enumerate(epsilons):
        if eps == 0.0:
            rows.append({"epsilon": eps, "mean_sq_dev": 0.0, "std_err": 0.0,
                         "realizations": realizations})
            continue
        devs = _path_deviations(model, grid, math.sqrt(eps), root_seed,
                                _block_indices(b, realizations), u0,
                                functional, beta, params)
        sq = devs ** 2
        rows.append({"epsilon": eps,
                     "mean_sq_dev": float(np.mean(sq)),
                     "std_err": float(np.std(sq, ddof=1) / math.sqrt(len(sq))),
                     "realizations": realizations})
    pos = [(r["epsilon"], r["mean_sq_dev"]) for r in rows if r["epsilon"] > 0]
    slope, _, se, _ = _ols_loglog(np.array([p[0] for p in pos]),
                                  np.array([p[1] for p in pos]))
    return ConvergenceResult(rows=rows, slope=slope, slope_se=se,
                             functional=functional)


# ---------------------------------------------------------------------------
# rare-event exponents

@dataclass
class LdpResult:
    rows: list            # epsilon, delta, p_hat, wilson_lo, wilson_hi, exponent, feasible
    stabilization: dict   # delta -> relative spread of the exponent, last 3 feasible eps
    statistic: str


def run_ldp_scan(model, grid: Grid, epsilons, deltas, realizations,
                 root_seed: int, *, statistic: str = "weighted-sup",
                 direction: str = "both", beta: float = 1.0) -> LdpResult:
    """Empirical exponents -eps log p_hat(statistic >= delta) over a ladder.

    `realizations` may be an int, or a list aligned with the (descending)
    epsilon ladder so deep-tail entries can afford more samples.  Exponent
    cells are only emitted when the crude-MC feasibility guard
    p_hat * R >= 10 holds; each row carries the Wilson 95% interval.  The
    stabilization diagnostic is the relative spread of the exponent over
    the last three feasible ladder entries.
    """
    epsilons = sorted((float(e) for e in epsilons), reverse=True)
    if isinstance(realizations, int):
        reals = [realizations] * len(epsilons)
    else:
        reals = [int(r) for r in realizations]
        if len(reals) != len(epsilons):
            raise ValueError("one realization count per ladder entry required")
    deltas = [float(d) for d in deltas]
    u0 = deterministic_limit(model, grid)
    stats = {}
    offset = 0
    for eps, r_eps in zip(epsilons, reals):
        indices = range(offset, offset + r_eps)
        offset += r_eps
        theta = math.sqrt(eps)
        if statistic == "terminal-mean-shift":
            res = solve_spde_batch(model, theta, grid, root_seed, indices)
            cvec = terminal_mean_vector(grid)
            shift = res.terminal @ cvec - float(u0.values[-1] @ cvec)
            stats[eps] = (shift if direction == "up"
                          else -shift if direction == "down" else np.abs(shift))
        elif statistic == "weighted-sup":
            res = solve_spde_batch(model, theta, grid, root_seed, indices,
                                   reference=u0, beta=beta)
            stats[eps] = res.sup_weighted_dev
        else:
            raise ValueError(f"unknown ldp statistic {statistic!r}")
    rows = []
    for delta in deltas:
        for eps, r_eps in zip(epsilons, reals):
            hits = int(np.count_nonzero(stats[eps] >= delta))
            p_hat = hits / r_eps
            lo, hi = wilson_interval(hits, r_eps)
            feasible = hits >= 10
            exponent = -eps * math.log(p_hat) if feasible and p_hat > 0 else None
            rows.append({"epsilon": eps, "delta": delta, "p_hat": p_hat,
                         "wilson_lo": lo, "wilson_hi": hi,
                         "exponent": exponent, "feasible": feasible,
                         "realizations": r_eps})
    stab = {}
    for delta in deltas:
        exps = [r["exponent"] for r in rows
                if r["delta"] == delta and r["exponent"] is not None]
        if len(exps) >= 2:
            last = exps[-3:]
            mid = sorted(last)[len(last) // 2]
            stab[delta] = (max(last) - min(last)) / abs(mid) if mid else math.inf
    return LdpResult(rows=rows, stabilization=stab, statistic=statistic)


# ---------------------------------------------------------------------------
# variational bracket

@dataclass
class BracketResult:
    mc_exponent: Optional[float]
    mc_epsilon: Optional[float]
    i_star: float
    ratio: Optional[float]            # mc_exponent / i_star
    mc_within_upper: Optional[bool]   # mc <= 1.25 * i_star
    istar_within_mc: Optional[bool]   # i_star <= 2 * mc + 0.05
    one_sided: bool
    scan: LdpResult
    minimizer: MinimizeResult

    def passes(self) -> bool:
        return bool(self.mc_within_upper and self.istar_within_mc)


def variational_bracket(model, grid: Grid, delta: float, epsilons,
                        realizations: int, root_seed: int, *,
                        direction: str = "both",
                        minimize_opts: Optional[dict] = None) -> BracketResult:
    """Bracket a terminal-mean-shift rate: crude-MC exponent vs the
    variational upper bound from the adjoint optimizer, on the same
    discrete system."""
    scan = run_ldp_scan(model, grid, epsilons, [delta], realizations, root_seed,
                        statistic="terminal-mean-shift", direction=direction)
    feasible = [r for r in scan.rows if r["exponent"] is not None]
    mc_row = min(feasible, key=lambda r: r["epsilon"]) if feasible else None
    event = MeanShiftEvent(delta, direction)
    res = minimize_rate(model, event, grid, **(minimize_opts or {}))
    i_star = res.report.i_energy
    if mc_row is None:
        return BracketResult(None, None, i_star, None, None, None, True, scan, res)
    mc = mc_row["exponent"]
    return BracketResult(
        mc_exponent=mc, mc_epsilon=mc_row["epsilon"], i_star=i_star,
        ratio=mc / i_star if i_star > 0 else math.inf,
        mc_within_upper=mc <= 1.25 * i_star,
        istar_within_mc=i_star <= 2.0 * mc + 0.05,
        one_sided=False, scan=scan, minimizer=res)


# ---------------------------------------------------------------------------
# moment-regression of space-time increments

@dataclass
class KolmogorovResult:
    pairs: list            # dicts with t1, y1, t2, y2, distance, moment
    exponent: float        # fitted 2 + q
    q_hat: float
    r2: float
    slope_se: float
    n_moment: int

    @property
    def q_ci95(self) -> tuple:
        return (self.q_hat - Z95 * self.slope_se, self.q_hat + Z95 * self.slope_se)


def _sample_pairs(grid: Grid, n_pairs: int, gen, t_range, y_range, dist_range):
    """Space-time point pairs with log-uniform separations, snapped to the grid."""
    pairs = []
    guard = 0
    while len(pairs) < n_pairs and guard < 50 * n_pairs:
        guard += 1
        d = math.exp(gen.uniform(math.log(dist_range[0]), math.log(dist_range[1])))
        frac = gen.uniform(0.0, 1.0)
        dy = d * frac * (1 if gen.uniform() < 0.5 else -1)
        dtt = d * (1.0 - frac)
        t1 = gen.uniform(t_range[0], max(t_range[0], t_range[1] - dtt))
        y1 = gen.uniform(*y_range)
        i1 = int(round(t1 / grid.dt))
        i2 = int(round((t1 + dtt) / grid.dt))
        j1 = int(round((y1 + grid.L) / grid.dx))
        j2 = int(round((y1 + dy + grid.L) / grid.dx))
        if not (0 <= i2 <= grid.nt and 0 <= j1 < grid.ny and 0 <= j2 < grid.ny):
            continue
        dist = abs(grid.y[j2] - grid.y[j1]) + abs(grid.times[i2] - grid.times[i1])
        if dist <= 0:
            continue
        pairs.append((i1, j1, i2, j2, dist))
    if len(pairs) < n_pairs:
        raise ValueError("could not sample enough distinct pairs; widen the ranges")
    return pairs


def kolmogorov_fit(model, grid: Grid, realizations: int, root_seed: int, *,
                   theta: float = 1.0, n_moment: int = 4, n_pairs: int = 150,
                   beta1: float = 0.75, t_range=(0.1, 1.0), y_range=(-1.5, 2.5),
                   dist_range=(0.05, 0.8)) -> KolmogorovResult:
    """Regress log E|u(t1,y1) - u(t2,y2)|^n against log(|dy| + |dt|).

    Moments are weight-corrected by exp(-n beta1 max(|y1|, |y2|)) before
    the fit; the reported q_hat is the fitted exponent minus 2.  An
    empirical diagnostic: the regression window is part of the
    configuration and the fit is only as power-law as the field is in it.
    """
    if n_moment % 2 != 0:
        raise ValueError("n_moment must be even")
    gen = NoiseStream(root_seed, 0).generator("kolmogorov-pairs")
    pairs = _sample_pairs(grid, n_pairs, gen, t_range, y_range, dist_range)
    acc = np.zeros(len(pairs))
    for r in range(realizations):
        path = solve_spde(model, theta, None, NoiseStream(root_seed, r), grid)
        v = path.values
        for k, (i1, j1, i2, j2, _) in enumerate(pairs):
            acc[k] += abs(v[i1, j1] - v[i2, j2]) ** n_moment
    moments = acc / realizations
    dists = np.array([p[4] for p in pairs])
    weights = np.array([math.exp(-n_moment * beta1
                                 * max(abs(grid.y[p[1]]), abs(grid.y[p[3]])))
                        for p in pairs])
    keep = moments > 0
    slope, _, se, r2 = _ols_loglog(dists[keep], (moments * weights)[keep])
    rows = [{"t1": grid.times[i1], "y1": grid.y[j1], "t2": grid.times[i2],
             "y2": grid.y[j2], "distance": d, "moment": m}
            for (i1, j1, i2, j2, d), m in zip(pairs, moments)]
    return KolmogorovResult(pairs=rows, exponent=slope, q_hat=slope - 2.0,
                            r2=r2, slope_se=se, n_moment=n_moment)


# ---------------------------------------------------------------------------
# particles vs field solver

@dataclass
class CompareResult:
    rows: list          # eps, time, function, means, variances, z-scores
    max_abs_z: float
    all_within: bool    # every |z| <= 3


def _spde_moments(model, grid, eps, root_seed, indices, steps, fvals):
    """Moment samples <mu_t, f> from the field solver; (B, len(steps), nf)."""
    res = solve_spde_batch(model, math.sqrt(eps), grid, root_seed, indices,
                           snapshot_steps=steps)
    masses = np.diff(res.snapshots, axis=2)          # (B, k, ny-1) midpoint atoms
    return np.einsum("bkm,fm->bkf", masses, fvals)


def _particle_moments(model, grid, eps, root_seed, indices, steps, fvals_at,
                      branching_rate):
    out = np.empty((len(list(indices)), len(steps), fvals_at.shape[0]))
    f0 = models.initial_field(model, grid)
    if model.kind == models.SBM:
        mu0 = cdf_to_measure(f0)
    else:
        mu0 = cdf_to_probability(f0)
    for i, idx in enumerate(indices):
        stream = NoiseStream(root_seed, int(idx))
        if model.kind == models.SBM:
            mp = simulate_sbm_particles(mu0, eps, stream, grid,
                                        branching_rate=branching_rate)
        else:
            mp = simulate_fv_moran(mu0, eps, stream, grid)
        for s, step in enumerate(steps):
            mu = mp.measure_at(step)
            for f, (_, fn) in enumerate(weak_test_dictionary()):
                out[i, s, f] = float(np.sum(fn(mu.positions) * mu.masses))
    return out


def compare_particles_spde(model, grid: Grid, epsilons, realizations: int,
                           root_seed: int, *, times=(0.25, 0.5, 1.0),
                           branching_rate: float = 1.0) -> CompareResult:
    """z-scores between particle and field-solver moment statistics.

    For every epsilon, time, and dictionary function, compares the mean
    and the variance of <mu_t, f> across realizations, using combined
    standard errors (the variance comparison uses the asymptotic fourth-
    moment standard error).  `branching_rate` is forwarded to the mass
    model so deliberate miscalibration can be injected.
    """
    if model.kind not in (models.SBM, models.FVP):
        raise ValueError("comparison requires a built-in model kind")
    steps = [int(round(t / grid.dt)) for t in times]
    names = [name for name, _ in weak_test_dictionary()]
    mids = 0.5 * (grid.y[:-1] + grid.y[1:])
    fvals = np.array([fn(mids) for _, fn in weak_test_dictionary()])
    rows = []
    max_z = 0.0
    for b, eps in enumerate(epsilons):
        idx = _block_indices(b, realizations)
        ms = _spde_moments(model, grid, eps, root_seed, idx, steps, fvals)
        mp = _particle_moments(model, grid, eps, root_seed, idx, steps, fvals,
                               branching_rate)
        for s, t in enumerate(times):
            for f, name in enumerate(names):
                a, bb = ms[:, s, f], mp[:, s, f]
                n = len(a)
                mean_z = (a.mean() - bb.mean()) / math.sqrt(
                    a.var(ddof=1) / n + bb.var(ddof=1) / n + 1e-300)
                va, vb = a.var(ddof=1), bb.var(ddof=1)
                m4a = float(np.mean((a - a.mean()) ** 4))
                m4b = float(np.mean((bb - bb.mean()) ** 4))
                se_v = math.sqrt(max(m4a - va ** 2, 0.0) / n
                                 + max(m4b - vb ** 2, 0.0) / n + 1e-300)
                var_z = (va - vb) / se_v
                rows.append({"epsilon": eps, "time": t, "function": name,
                             "mean_spde": float(a.mean()), "mean_particles": float(bb.mean()),
                             "z_mean": float(mean_z),
                             "var_spde": float(va), "var_particles": float(vb),
                             "z_var": float(var_z)})
                max_z = max(max_z, abs(mean_z), abs(var_z))
    return CompareResult(rows=rows, max_abs_z=max_z, all_within=max_z <= 3.0)
