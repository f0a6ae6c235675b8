"""Discrete particle approximations: branching Brownian mass and Moran resampling.

These are the independent ground truth for the field solvers.  Their event
rates are calibrated so that the realized quadratic variation of measure
moments matches the target martingale problems:

* branching mass model: particles of mass eps move as Brownian motions and
  branch critically (die or split with probability 1/2 each) at rate
  `branching_rate`; a moment <mu, f> then has quadratic variation rate
  branching_rate * eps * <mu, f^2> plus an O(eps^2) movement term, so rate
  1 with mass eps matches the super-Brownian target eps * <mu, f^2>.
* Moran model: N = 1/eps individuals move as Brownian motions and every
  ordered pair resamples at rate eps/2, giving <mu, f> quadratic variation
  eps * (<mu, f^2> - <mu, f>^2) from resampling plus an O(1/N) movement
  term -- the Fleming-Viot target.

Events use per-step thinning (probability rate * dt), biased O(dt).
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, PathField
from .metrics import AtomicMeasure, MeasurePath
from .noise import NoiseStream

ANCHOR_ZERO = "zero"
ANCHOR_MINUS_INFINITY = "minus_infinity"


def _sample_positions(mu0: AtomicMeasure, count: int,
                      gen: np.random.Generator) -> np.ndarray:
    total = mu0.total_mass()
    if total <= 0:
        raise ValueError("initial measure must have positive mass")
    probs = mu0.masses / total
    return gen.choice(mu0.positions, size=count, p=probs)


def simulate_sbm_particles(mu0: AtomicMeasure, epsilon: float, stream: NoiseStream,
                           grid: Grid, *, branching_rate: float = 1.0,
                           cap: int = 10 ** 6) -> MeasurePath:
    """Critically branching Brownian particles of mass eps.

    Initial positions are sampled from mu0 (count = mass / eps).  Each
    step every particle moves by a N(0, dt) increment, then with
    probability branching_rate * dt either dies or splits in two (fair
    coin).  branching_rate = 0 disables branching (validation mode: total
    mass is then constant).  Returns the empirical measure path at the
    grid times.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n0 = int(round(mu0.total_mass() / epsilon))
    if n0 < 1:
        raise ValueError("initial mass below one particle at this epsilon")
    if n0 > cap:
        raise ValueError(f"initial particle count {n0} exceeds cap {cap}")
    gen = stream.generator("sbm-particles")
    x = _sample_positions(mu0, n0, gen)
    measures = [AtomicMeasure(x.copy(), np.full(x.size, epsilon))]
    for _ in range(grid.nt):
        if x.size:
            x = x + np.sqrt(grid.dt) * gen.standard_normal(x.size)
            if branching_rate > 0.0:
                event = gen.random(x.size) < branching_rate * grid.dt
                split = event & (gen.random(x.size) < 0.5)
                keep = x[~event]
                twins = x[split]
                x = np.concatenate([keep, twins, twins])
            if x.size > cap:
                raise ValueError(f"particle count {x.size} exceeds cap {cap}")
        measures.append(AtomicMeasure(x.copy(), np.full(x.size, epsilon)))
    return MeasurePath.from_atoms(grid.times, measures, grid=grid)


def simulate_fv_moran(mu0: AtomicMeasure, epsilon: float, stream: NoiseStream,
                      grid: Grid, *, resampling: bool = True) -> MeasurePath:
    """Moran model with N = round(1/eps) individuals.

    Each individual moves as a Brownian motion; each ordered pair (i, j)
    resamples (j adopts i's position) at rate eps/2, realized per step by
    Poisson thinning of the total rate N (N - 1) eps / 2.  The empirical
    measure keeps total mass exactly 1.
    """
    n = int(round(1.0 / epsilon))
    if n < 10:
        raise ValueError(f"need at least 10 individuals, got {n}")
    gen = stream.generator("moran-particles")
    x = _sample_positions(mu0, n, gen)
    mass = np.full(n, 1.0 / n)
    event_rate = n * (n - 1) * epsilon / 2.0
    measures = [AtomicMeasure(x.copy(), mass.copy())]
    for _ in range(grid.nt):
        x = x + np.sqrt(grid.dt) * gen.standard_normal(n)
        if resampling:
            for _ in range(gen.poisson(event_rate * grid.dt)):
                i = int(gen.integers(n))
                j = int(gen.integers(n - 1))
                if j >= i:
                    j += 1
                x[j] = x[i]
        measures.append(AtomicMeasure(x.copy(), mass.copy()))
    return MeasurePath.from_atoms(grid.times, measures, grid=grid)


def empirical_cdf_field(path: MeasurePath, anchor: str) -> PathField:
    """Anchored cumulative mass of each step's atoms at the grid points.

    anchor "minus_infinity": u(y) = mu((-inf, y]).  anchor "zero":
    u(y) = mu((0, y]) for y > 0 and -mu((y, 0]) for y < 0, so u(0) = 0.
    Monotone by construction.
    """
    if anchor not in (ANCHOR_ZERO, ANCHOR_MINUS_INFINITY):
        raise ValueError(f"unknown anchor {anchor!r}")
    if path.grid is None:
        raise ValueError("measure path carries no grid to evaluate on")
    g = path.grid
    out = np.empty((len(path), g.ny))
    for n in range(len(path)):
        mu = path.measure_at(n)
        order = np.argsort(mu.positions, kind="stable")
        pos = mu.positions[order]
        cum = np.concatenate([[0.0], np.cumsum(mu.masses[order])])
        vals = cum[np.searchsorted(pos, g.y, side="right")]
        if anchor == ANCHOR_ZERO:
            vals = vals - cum[int(np.searchsorted(pos, 0.0, side="right"))]
        out[n] = vals
    return PathField(out, g)
