"""Weighted Hölder norms, measure paths, and weak-convergence diagnostics.

The state space machinery: exponentially weighted Hölder (semi)norms and
the induced series metric on fields; sigma-finite measures carried either
as grid densities or as atom lists; the Stieltjes correspondences between
nondecreasing fields and the measures they are distribution functions of;
the smoothed exponential weight with its sandwich constants; and a
dictionary-based pseudometric for the weighted weak topology.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .grid import Field, Grid, PathField


@dataclass(frozen=True)
class MetricParams:
    """Exponents and truncation depth for the weighted Hölder metric.

    alpha is the local Hölder exponent (must be below 1/2, matching the
    spatial regularity the noise allows); beta the growth-weight rate;
    beta0 < beta1 < beta are the strictly smaller rates used for initial
    data and moment weighting; m_max truncates the metric series, with
    tail bound 2**-m_max.
    """

    alpha: float = 0.4
    beta: float = 1.0
    beta0: float = 0.5
    beta1: float = 0.75
    m_max: int = 16

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must be in (0, 1/2), got {self.alpha}")
        if not 0.0 < self.beta0 < self.beta1 < self.beta:
            raise ValueError(
                f"need 0 < beta0 < beta1 < beta, got {self.beta0}, {self.beta1}, {self.beta}")
        if self.m_max < 8:
            raise ValueError(f"m_max must be >= 8, got {self.m_max}")


def holder_norm(u: Field, m: int, params: MetricParams) -> float:
    """Weighted sup plus the level-m windowed Hölder seminorm.

    sup_x e^(-beta |x|) |u(x)|  +  e^(-beta m) sup |u(y1)-u(y2)| / |y1-y2|^alpha,
    the pair supremum running over grid points with |y_i| <= m.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    g = u.grid
    term1 = float(np.max(np.exp(-params.beta * np.abs(g.y)) * np.abs(u.values)))
    mask = np.abs(g.y) <= m + 1e-12
    yy, vv = g.y[mask], u.values[mask]
    term2 = 0.0
    if len(yy) >= 2:
        iu, ju = np.triu_indices(len(yy), 1)
        ratios = np.abs(vv[iu] - vv[ju]) / np.abs(yy[iu] - yy[ju]) ** params.alpha
        term2 = np.exp(-params.beta * m) * float(np.max(ratios))
    return term1 + term2


def _holder_running_max(values: np.ndarray, y: np.ndarray, alpha: float):
    """Running pair-ratio maxima over points ordered by |y|.

    Returns (sorted |y|, running max of |du|/|dy|^alpha over the leading
    points), so the windowed supremum for any m is one lookup.
    """
    order = np.argsort(np.abs(y), kind="stable")
    yy = y[order]
    vv = values[order]
    absy = np.abs(yy)
    run = np.zeros(len(yy))
    best = 0.0
    for k in range(1, len(yy)):
        r = np.abs(vv[k] - vv[:k]) / np.abs(yy[k] - yy[:k]) ** alpha
        best = max(best, float(np.max(r)))
        run[k] = best
    return absy, run


def metric_d(u: Field, v: Field, params: MetricParams) -> float:
    """Series metric sum_m 2^-m (||u - v||_m ^ 1), truncated at m_max.

    Values lie in [0, 1); the truncation tail is bounded by 2^-m_max.
    """
    if u.grid is not v.grid and u.grid != v.grid:
        raise ValueError("fields must share a grid")
    g = u.grid
    w = u.values - v.values
    term1 = float(np.max(np.exp(-params.beta * np.abs(g.y)) * np.abs(w)))
    absy, run = _holder_running_max(w, g.y, params.alpha)
    total = 0.0
    for m in range(1, params.m_max + 1):
        k = int(np.searchsorted(absy, m + 1e-12, side="right"))
        holder = run[k - 1] if k >= 2 else 0.0
        total += 2.0 ** -m * min(1.0, term1 + np.exp(-params.beta * m) * holder)
    return total


# ---------------------------------------------------------------------------
# measures

@dataclass
class AtomicMeasure:
    """Finite nonnegative measure given by atoms."""

    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.positions.shape != self.masses.shape or self.positions.ndim != 1:
            raise ValueError("positions and masses must be equal-length 1-D arrays")
        if self.masses.size and float(np.min(self.masses)) < -1e-12:
            raise ValueError("masses must be nonnegative")

    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def moment(self, f: Callable) -> float:
        return float(np.sum(f(self.positions) * self.masses))

    def weighted_moment(self, f: Callable, beta: float) -> float:
        w = np.exp(-beta * np.abs(self.positions))
        return float(np.sum(f(self.positions) * w * self.masses))


class MeasurePath:
    """Discretized measure path t -> mu_t: densities on a grid, or atoms.

    fvp-tagged paths are validated to carry unit mass at every step
    (within 1e-6).
    """

    def __init__(self, times: np.ndarray, *, densities: Optional[np.ndarray] = None,
                 centers: Optional[np.ndarray] = None, atoms=None,
                 kind: Optional[str] = None, grid: Optional[Grid] = None):
        self.times = np.asarray(times, dtype=float)
        self.kind = kind
        self.grid = grid
        self.centers = None if centers is None else np.asarray(centers, dtype=float)
        self.atoms = atoms
        if (densities is None) == (atoms is None):
            raise ValueError("provide exactly one of densities or atoms")
        if densities is not None:
            densities = np.asarray(densities, dtype=float)
            if densities.shape[0] != len(self.times):
                raise ValueError("one density row per time required")
            if float(np.min(densities)) < -1e-9:
                raise ValueError("densities must be nonnegative")
            self.densities = np.clip(densities, 0.0, None)
            self.dx = float(self.centers[1] - self.centers[0])
        else:
            if len(atoms) != len(self.times):
                raise ValueError("one atom set per time required")
            self.densities = None
        if kind == "fvp":
            masses = np.array([self.mass(n) for n in range(len(self.times))])
            if np.max(np.abs(masses - 1.0)) > 1e-6:
                raise ValueError("fvp measure paths must have unit mass per step")

    @classmethod
    def from_cdf_path(cls, path: PathField, kind: Optional[str] = None,
                      normalize: bool = False) -> "MeasurePath":
        """Histogram densities of the per-slice Stieltjes measures.

        Cell k of the density grid sits at the midpoint of (y_k, y_{k+1})
        and carries mass u(y_{k+1}) - u(y_k).
        """
        g = path.grid
        diffs = np.diff(path.values, axis=1)
        if float(np.min(diffs)) < -1e-9:
            raise ValueError("path slices must be nondecreasing; project first")
        dens = np.clip(diffs, 0.0, None) / g.dx
        if normalize:
            dens = dens / np.sum(dens * g.dx, axis=1, keepdims=True)
        centers = 0.5 * (g.y[:-1] + g.y[1:])
        return cls(g.times, densities=dens, centers=centers, kind=kind, grid=g)

    @classmethod
    def from_atoms(cls, times, measures, kind: Optional[str] = None,
                   grid: Optional[Grid] = None) -> "MeasurePath":
        return cls(times, atoms=list(measures), kind=kind, grid=grid)

    def __len__(self):
        return len(self.times)

    def measure_at(self, n: int) -> AtomicMeasure:
        if self.densities is not None:
            return AtomicMeasure(self.centers, self.densities[n] * self.dx)
        return self.atoms[n]

    def mass(self, n: int) -> float:
        if self.densities is not None:
            return float(np.sum(self.densities[n]) * self.dx)
        return self.atoms[n].total_mass()

    def moment(self, f: Callable, n: int) -> float:
        return self.measure_at(n).moment(f)


def cdf_to_measure(u: Field) -> AtomicMeasure:
    """Stieltjes measure of a nondecreasing field: atoms at grid midpoints
    with masses u(y_{i+1}) - u(y_i); total mass u(L) - u(-L)."""
    diffs = np.diff(u.values)
    if float(np.min(diffs)) < -1e-9:
        bad = int(np.argmin(diffs))
        raise ValueError(
            f"field must be nondecreasing; violated near y={u.grid.y[bad]:.6g}")
    mids = 0.5 * (u.grid.y[:-1] + u.grid.y[1:])
    return AtomicMeasure(mids, np.clip(diffs, 0.0, None))


def cdf_to_probability(u: Field, tol: float = 1e-6) -> AtomicMeasure:
    """As `cdf_to_measure` for distribution functions, renormalized to
    total mass exactly 1; endpoint values must be 0 and 1 within tol."""
    if abs(u.values[0]) > tol or abs(u.values[-1] - 1.0) > tol:
        raise ValueError(
            f"distribution function must run 0 to 1 within {tol:g} "
            f"(got {u.values[0]:.3g} .. {u.values[-1]:.3g})")
    mu = cdf_to_measure(u)
    total = mu.total_mass()
    if total <= 0:
        raise ValueError("degenerate distribution function with zero mass")
    return AtomicMeasure(mu.positions, mu.masses / total)


# ---------------------------------------------------------------------------
# smoothed exponential weight

@lru_cache(maxsize=1)
def _gauss_legendre(n: int = 80):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=1)
def _bump_normalization() -> float:
    x, w = _gauss_legendre()
    vals = np.exp(-1.0 / (1.0 - x * x))
    return float(np.sum(w * vals))


def standard_bump(x) -> np.ndarray:
    """Unit-mass bump supported on (-1, 1)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi)) / _bump_normalization()
    return out


def _weight_panel(beta: float, x: float, lo: float, hi: float) -> float:
    nodes, w = _gauss_legendre()
    z = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    vals = np.exp(-beta * np.abs(x - z)) * standard_bump(z)
    return 0.5 * (hi - lo) * float(np.sum(w * vals))


def mollified_weight(beta: float, x) -> np.ndarray:
    """Exponential weight smoothed by the unit bump: the convolution of
    exp(-beta |.|) with the mollifier, evaluated by quadrature.

    Lies in (0, 1] and is sandwiched between multiples of exp(-beta |x|)
    with ratio at most e^(2 beta) (the mollifier has unit support radius).
    """
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xs)
    for i, xi in enumerate(xs):
        if abs(xi) < 1.0:  # kink of |x - z| at z = x: integrate each side
            out[i] = (_weight_panel(beta, xi, -1.0, xi)
                      + _weight_panel(beta, xi, xi, 1.0))
        else:
            out[i] = _weight_panel(beta, xi, -1.0, 1.0)
    return out if np.ndim(x) else float(out[0])


def sandwich_constants(beta: float, y: Optional[np.ndarray] = None) -> tuple:
    """Scan for (c0, C0) with c0 e^(-beta|x|) <= J(x) <= C0 e^(-beta|x|)."""
    if y is None:
        y = np.linspace(-8.0, 8.0, 321)
    vals = mollified_weight(beta, y) * np.exp(beta * np.abs(y))
    return float(np.min(vals)), float(np.max(vals))


# ---------------------------------------------------------------------------
# weak-topology pseudometric

def _clip_poly(scale: float, power: int):
    lo = 0.0 if power % 2 == 0 else -1.0
    return lambda x: np.clip((x / scale) ** power, lo, 1.0)


@lru_cache(maxsize=1)
def weak_test_dictionary():
    """The 21 bounded test functions behind the weak pseudometric.

    1 constant; 4 clipped polynomials (degrees 1-3 at scale 2, degree 1 at
    scale 4); 8 Gaussian bumps exp(-2 (x - c)^2) and 8 smoothed steps
    (1 + tanh((x - c)/0.5))/2, both at centers -3.5, -2.5, ..., 3.5.
    """
    fns = [("const", lambda x: np.ones_like(np.asarray(x, dtype=float)))]
    fns.append(("poly1s2", _clip_poly(2.0, 1)))
    fns.append(("poly2s2", _clip_poly(2.0, 2)))
    fns.append(("poly3s2", _clip_poly(2.0, 3)))
    fns.append(("poly1s4", _clip_poly(4.0, 1)))
    centers = np.arange(-3.5, 4.0, 1.0)
    for c in centers:
        fns.append((f"bump{c:+.1f}",
                    lambda x, c=c: np.exp(-2.0 * (np.asarray(x, float) - c) ** 2)))
    for c in centers:
        fns.append((f"step{c:+.1f}",
                    lambda x, c=c: 0.5 * (1.0 + np.tanh((np.asarray(x, float) - c) / 0.5))))
    return tuple(fns)


def weak_metric(mu: AtomicMeasure, nu: AtomicMeasure, beta: float) -> float:
    """Dictionary supremum of |integral of f e^(-beta|x|) d(mu - nu)|.

    A pseudometric adequate for desk-scale convergence diagnostics in the
    weighted weak topology (it cannot separate measures that agree on the
    dictionary).
    """
    best = 0.0
    for _, f in weak_test_dictionary():
        gap = abs(mu.weighted_moment(f, beta) - nu.weighted_moment(f, beta))
        best = max(best, gap)
    return best
