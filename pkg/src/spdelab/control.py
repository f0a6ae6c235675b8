"""Controlled deterministic solves, rate functionals, and their minimization.

The large-deviation cost of a path is half the squared L2 norm of a
control h on time x noise-space that reproduces the path through the
controlled equation.  This module evaluates that cost three ways

* directly from a control (`control_energy`),
* from a measure path via the density-form functional (`rate_density`),
* as a variational upper bound for a terminal event (`minimize_rate`,
  adjoint-gradient descent on a penalized objective),

and provides the centering projection that removes the energy wasted by
constant-in-a components for the probability-measure model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from . import models
from .grid import Field, Grid, PathField, heat_bands, solve_tridiag, transpose_bands
from .metrics import MeasurePath, weak_test_dictionary
from .solver import solve_spde


@dataclass
class Control:
    """Control values h[step][cell] on the time x noise grid.

    Units 1 / sqrt(time * noise-length); the associated cost is
    (1/2) sum h^2 dt da.
    """

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expect = (self.grid.nt, self.grid.na)
        if self.values.shape != expect:
            raise ValueError(f"control shape {self.values.shape} != (nt, na) = {expect}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")

    @staticmethod
    def zero(grid: Grid) -> "Control":
        return Control(np.zeros((grid.nt, grid.na)), grid)

    @staticmethod
    def from_function(fn: Callable, grid: Grid) -> "Control":
        """Sample h(s, a) at step starts and cell midpoints."""
        s = grid.times[:-1][:, None]
        a = grid.a_mid[None, :]
        return Control(np.broadcast_to(np.asarray(fn(s, a), dtype=float),
                                       (grid.nt, grid.na)).copy(), grid)


def control_energy(h: Control) -> float:
    """(1/2) integral of h^2 over time x noise-space."""
    return 0.5 * float(np.sum(h.values ** 2)) * h.grid.dt * h.grid.da


def basis_to_control(k: np.ndarray, grid: Grid) -> Control:
    """Reshape per-cell coefficient sequences into a control.

    With the normalized-indicator basis on noise cells the expansion
    h_s(a) = sum_j k_s^j phi_j(a) is just h[step][cell] = k[step][cell] /
    sqrt(da); the round trip with `control_to_basis` is exact and the
    sequence-space energy integral of ||k_s||^2 equals twice the control
    energy.
    """
    k = np.asarray(k, dtype=float)
    if k.shape != (grid.nt, grid.na):
        raise ValueError(f"coefficients shape {k.shape} != (nt, na)")
    return Control(k / np.sqrt(grid.da), grid)


def control_to_basis(h: Control) -> np.ndarray:
    return h.values * np.sqrt(h.grid.da)


def center_control(h: Control) -> Control:
    """Remove the per-step a-mean (probability-measure model only).

    Constant-in-a control components act trivially on the controlled
    equation for the centered-indicator coefficient, so centering never
    changes the path and never increases the energy.
    """
    g = h.grid
    if (g.a_min, g.a_max) != (0.0, 1.0):
        raise ValueError("centering requires the unit noise window (0, 1)")
    return Control(h.values - h.values.mean(axis=1, keepdims=True), g)


def solve_controlled(model, h: Control, grid: Grid, *, project: bool = True) -> PathField:
    """Deterministic controlled path (theta = 0 plus the control drift)."""
    return solve_spde(model, 0.0, h, None, grid, project=project)


# ---------------------------------------------------------------------------
# density-form rate functional

@dataclass
class CameronMartinDiagnostics:
    """Finite-grid proxies for the admissibility conditions of a measure path.

    The time-regularity check is a total-variation proxy (no exact
    finite-grid test exists): steps whose dictionary moments jump by more
    than `jump_factor` times the median step increment are flagged.
    """

    initial_gap: Optional[float]          # sup density gap to the reference, if given
    initial_ok: Optional[bool]
    moment_tv: dict
    flagged_steps: list
    zero_density_violations: int          # cells with no mass but nonzero drift residual
    worst_zero_density: Optional[tuple]   # (t, y, |residual|)
    psi_l2_sq: float                      # squared L2(mu) norm of the density quotient
    psi_l2_finite: bool

    def all_pass(self) -> bool:
        ok = self.psi_l2_finite and not self.flagged_steps
        ok = ok and self.zero_density_violations == 0
        if self.initial_ok is not None:
            ok = ok and self.initial_ok
        return ok


@dataclass
class RateReport:
    """Rate-functional evaluation of one measure path."""

    i_density: float
    psi: np.ndarray                 # (steps, cells) density-form quotient
    floor_mass: float               # fraction of cells where the floor was active
    i_energy: Optional[float] = None
    centering_residual: Optional[np.ndarray] = None   # per-step <mu, psi> (fvp)
    cm: Optional[CameronMartinDiagnostics] = None


def _time_derivative(w: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(w)
    out[1:-1] = (w[2:] - w[:-2]) / (2.0 * dt)
    out[0] = (w[1] - w[0]) / dt
    out[-1] = (w[-1] - w[-2]) / dt
    return out


def _second_difference(w: np.ndarray, dx: float) -> np.ndarray:
    # same symmetric stencil as the heat operator, mirrored at the edges
    out = np.empty_like(w)
    out[:, 1:-1] = (w[:, 2:] - 2.0 * w[:, 1:-1] + w[:, :-2]) / dx ** 2
    out[:, 0] = 2.0 * (w[:, 1] - w[:, 0]) / dx ** 2
    out[:, -1] = 2.0 * (w[:, -2] - w[:, -1]) / dx ** 2
    return out


def rate_density(path: MeasurePath, kind: str, floor: float = 1e-8,
                 with_cm: bool = True) -> RateReport:
    """Density-form rate: (1/2) double integral of psi^2 against the path,
    with psi = (dw/dt - (1/2) w'') / w.

    Time derivatives are centered in the interior and one-sided at the
    endpoints; the second difference uses the same symmetric stencil as
    the heat operator.  Where the density is below `floor` the quotient is
    taken against the floored density (and still enters the integrand with
    the floored density); `floor_mass` reports how often that happened.
    For the probability-measure model the per-step centering residual
    <mu_t, psi_t> is reported as well.
    """
    if path.densities is None:
        raise ValueError("rate_density requires a density-represented path")
    if kind not in (models.SBM, models.FVP):
        raise ValueError(f"kind must be sbm or fvp, got {kind!r}")
    w = path.densities
    dt = float(path.times[1] - path.times[0])
    dx = path.dx
    wdot = _time_derivative(w, dt)
    wxx = _second_difference(w, dx)
    wfl = np.maximum(w, floor)
    psi = (wdot - 0.5 * wxx) / wfl
    tw = np.full(len(path.times), dt)
    tw[0] *= 0.5
    tw[-1] *= 0.5
    i_density = 0.5 * float(np.sum(tw[:, None] * psi ** 2 * wfl) * dx)
    floor_mass = float(np.mean(w < floor))
    residual = None
    if kind == models.FVP:
        residual = np.sum(psi * w, axis=1) * dx
    cm = None
    if with_cm:
        cm = cameron_martin_check(path, floor=floor,
                                  _precomputed=(wdot, wxx, psi))
    return RateReport(i_density=i_density, psi=psi, floor_mass=floor_mass,
                      centering_residual=residual, cm=cm)


def cameron_martin_check(path: MeasurePath, nu: Optional[np.ndarray] = None,
                         floor: float = 1e-8, jump_factor: float = 10.0,
                         zero_density_atol: float = 1e-6,
                         _precomputed=None) -> CameronMartinDiagnostics:
    """Diagnostics (not assertions) for path admissibility.

    Checks, in finite-grid proxy form: the initial measure against an
    optional reference density `nu`; absolute continuity in time through
    dictionary-moment total variation with jump flagging; absence of drift
    residual where the density vanishes; and finiteness of the L2(mu) norm
    of the density quotient.
    """
    if path.densities is None:
        raise ValueError("diagnostics require a density-represented path")
    w = path.densities
    dt = float(path.times[1] - path.times[0])
    dx = path.dx
    if _precomputed is None:
        wdot = _time_derivative(w, dt)
        wxx = _second_difference(w, dx)
        psi = (wdot - 0.5 * wxx) / np.maximum(w, floor)
    else:
        wdot, wxx, psi = _precomputed

    initial_gap = initial_ok = None
    if nu is not None:
        nu = np.asarray(nu, dtype=float)
        initial_gap = float(np.max(np.abs(w[0] - nu)))
        initial_ok = initial_gap <= 1e-9 + 1e-6 * float(np.max(np.abs(nu)))

    moment_tv = {}
    step_scores = np.zeros(len(path.times) - 1)
    for name, f in weak_test_dictionary():
        series = (w * f(path.centers)[None, :]).sum(axis=1) * dx
        inc = np.abs(np.diff(series))
        moment_tv[name] = float(np.sum(inc))
        scale = max(float(np.median(inc)), 1e-15)
        np.maximum(step_scores, inc / scale, out=step_scores)
    flagged = [int(i) for i in np.flatnonzero(step_scores > jump_factor)]

    drift = np.abs(wdot - 0.5 * wxx)
    bad = (w < floor) & (drift > zero_density_atol)
    n_bad = int(np.count_nonzero(bad))
    worst = None
    if n_bad:
        flat = int(np.argmax(np.where(bad, drift, -np.inf)))
        ti, yi = np.unravel_index(flat, drift.shape)
        worst = (float(path.times[ti]), float(path.centers[yi]), float(drift[ti, yi]))

    tw = np.full(len(path.times), dt)
    tw[0] *= 0.5
    tw[-1] *= 0.5
    psi_l2_sq = float(np.sum(tw[:, None] * psi ** 2 * np.maximum(w, floor)) * dx)
    return CameronMartinDiagnostics(
        initial_gap=initial_gap, initial_ok=initial_ok, moment_tv=moment_tv,
        flagged_steps=flagged, zero_density_violations=n_bad,
        worst_zero_density=worst, psi_l2_sq=psi_l2_sq,
        psi_l2_finite=bool(np.isfinite(psi_l2_sq)))


# ---------------------------------------------------------------------------
# terminal events and the variational problem

def terminal_mean_vector(grid: Grid) -> np.ndarray:
    """Linear functional c with c . u = integral of y d(mu)(y) for the
    Stieltjes measure of a field u (atoms at midpoints)."""
    mids = 0.5 * (grid.y[:-1] + grid.y[1:])
    c = np.zeros(grid.ny)
    c[:-1] -= mids
    c[1:] += mids
    return c


def terminal_mean(values: np.ndarray, grid: Grid) -> float:
    return float(terminal_mean_vector(grid) @ values)


@dataclass(frozen=True)
class MeanShiftEvent:
    """Terminal event: the measure mean moves by at least `delta` relative
    to the uncontrolled path ("up", "down", or "both" sides)."""

    delta: float
    direction: str = "up"

    def __post_init__(self):
        if self.direction not in ("up", "down", "both"):
            raise ValueError(f"direction must be up/down/both, got {self.direction!r}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


@dataclass(frozen=True)
class TerminalFieldEvent:
    """Terminal event: match a target terminal field in L2."""

    target: np.ndarray


@dataclass
class MinimizeResult:
    control: Control
    report: RateReport
    converged: bool
    violation: float
    trace: list  # rows (iteration, objective, energy, violation)

    @property
    def i_energy(self) -> float:
        return self.report.i_energy


class _PenalizedObjective:
    """Energy + penalty * violation, with the adjoint gradient.

    The forward map is the unprojected controlled scheme (the isotonic
    projection is inactive for the smooth regimes being optimized, and
    omitting it keeps the objective differentiable).
    """

    def __init__(self, model, grid: Grid, event, sign: float = +1.0):
        if model.kind not in (models.SBM, models.FVP):
            raise ValueError("minimize_rate supports the built-in model kinds only")
        self.model = model
        self.grid = grid
        self.event = event
        self.sign = sign
        self.f0 = models.initial_field(model, grid).values
        self.ab = heat_bands(grid, grid.dt)
        self.ab_t = transpose_bands(self.ab)
        if isinstance(event, MeanShiftEvent):
            self.cvec = terminal_mean_vector(grid)
            base = self._forward(np.zeros((grid.nt, grid.na)))[-1]
            self.m_star = float(self.cvec @ base) + sign * event.delta
        elif isinstance(event, TerminalFieldEvent):
            self.target = np.asarray(event.target, dtype=float)
            if self.target.shape != (grid.ny,):
                raise ValueError("event target must live on the grid")
        else:
            raise TypeError(f"unsupported event {type(event).__name__}")

    def _forward(self, h: np.ndarray) -> np.ndarray:
        g = self.grid
        us = np.empty((g.nt + 1, g.ny))
        us[0] = self.f0
        u = self.f0
        for n in range(g.nt):
            cells = models.coefficient_cell_integrals(self.model, u, g)
            u = solve_tridiag(self.ab, u + g.dt * (cells @ h[n]))
            us[n + 1] = u
        return us

    def violation(self, u_term: np.ndarray) -> float:
        if isinstance(self.event, MeanShiftEvent):
            gap = self.sign * (self.m_star - float(self.cvec @ u_term))
            return max(0.0, gap) ** 2
        diff = u_term - self.target
        return 0.5 * float(np.sum(diff ** 2)) * self.grid.dx

    def _violation_gradient(self, u_term: np.ndarray) -> np.ndarray:
        if isinstance(self.event, MeanShiftEvent):
            gap = self.sign * (self.m_star - float(self.cvec @ u_term))
            if gap <= 0.0:
                return np.zeros_like(u_term)
            return -2.0 * gap * self.sign * self.cvec
        return (u_term - self.target) * self.grid.dx

    def _drift_slope(self, u: np.ndarray, h_row: np.ndarray) -> np.ndarray:
        """d/du of the control drift: the control value at the cell of u
        (minus the window mean for the centered-indicator model)."""
        g = self.grid
        idx = np.clip(((u - g.a_min) / g.da).astype(int), 0, g.na - 1)
        slope = h_row[idx]
        if self.model.kind == models.FVP:
            slope = slope - g.da * float(np.sum(h_row))
        else:
            inside = (u > g.a_min) & (u < g.a_max)
            slope = np.where(inside, slope, 0.0)
        return slope

    def value_and_gradient(self, h: np.ndarray, penalty: float):
        g = self.grid
        us = self._forward(h)
        viol = self.violation(us[-1])
        energy = 0.5 * float(np.sum(h ** 2)) * g.dt * g.da
        obj = energy + penalty * viol

        grad = h * (g.dt * g.da)
        lam = penalty * self._violation_gradient(us[-1])
        for n in range(g.nt - 1, -1, -1):
            m = solve_tridiag(self.ab_t, lam)
            cells = models.coefficient_cell_integrals(self.model, us[n], g)
            grad[n] += g.dt * (cells.T @ m)
            lam = m * (1.0 + g.dt * self._drift_slope(us[n], h[n]))
        return obj, grad, energy, viol


def _descend(obj: _PenalizedObjective, h: np.ndarray, penalty: float,
             max_iter: int, gtol: float, trace: list, it0: int):
    step = 1.0
    value, grad, energy, viol = obj.value_and_gradient(h, penalty)
    stall = 0
    for it in range(max_iter):
        gnorm = float(np.max(np.abs(grad)))
        trace.append((it0 + it, value, energy, viol))
        if gnorm <= gtol * max(1.0, float(np.max(np.abs(h)))):
            return h, value, viol, True, it0 + it + 1
        accepted = False
        for _ in range(40):
            cand = h - step * grad
            c_value, c_grad, c_energy, c_viol = obj.value_and_gradient(cand, penalty)
            if c_value <= value - 1e-4 * step * float(np.sum(grad * grad)):
                stall = stall + 1 if value - c_value <= 1e-10 * (1.0 + abs(value)) else 0
                h, value, grad, energy, viol = cand, c_value, c_grad, c_energy, c_viol
                step *= 1.3
                accepted = True
                break
            step *= 0.5
        if not accepted or stall >= 3:
            # line search stalled or progress below resolution: converged
            return h, value, viol, True, it0 + it + 1
    return h, value, viol, False, it0 + max_iter


def _rescale_to_feasible(obj: _PenalizedObjective, h: np.ndarray) -> np.ndarray:
    """Scale the control so a mean-shift event is met exactly (bisection).

    Keeps the reported energy an honest upper bound: the returned control
    achieves the event in the discrete system.
    """
    def feasible(s):
        return obj.violation(obj._forward(s * h)[-1]) <= 0.0

    if float(np.max(np.abs(h))) == 0.0:
        return h
    hi = 1.0
    for _ in range(12):
        if feasible(hi):
            break
        hi *= 1.3
    else:
        return h  # cannot reach the event by scaling; keep the iterate
    lo = 0.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi * h


def minimize_rate(model, event, grid: Grid, *, penalty0: float = 1e3,
                  penalty_growth: float = 10.0, rounds: int = 3,
                  max_iter: int = 200, gtol: float = 1e-9,
                  rate_floor: float = 1e-8,
                  with_density: bool = True) -> MinimizeResult:
    """Upper-bound the rate of a terminal event by penalized descent.

    Minimizes control_energy(h) + penalty * violation(controlled path)
    with the penalty increased over `rounds`; gradients come from the
    discrete adjoint of the splitting scheme (transposed tridiagonal heat
    solves, reverse-time accumulation through the control-drift
    linearization).  Mean-shift events with direction "both" solve the up
    and down problems and keep the cheaper; mean-shift optimizers are
    rescaled at the end so the event is met exactly.
    """
    if isinstance(event, MeanShiftEvent) and event.direction == "both":
        opts = dict(penalty0=penalty0, penalty_growth=penalty_growth,
                    rounds=rounds, max_iter=max_iter, gtol=gtol,
                    rate_floor=rate_floor, with_density=with_density)
        up = minimize_rate(model, MeanShiftEvent(event.delta, "up"), grid, **opts)
        down = minimize_rate(model, MeanShiftEvent(event.delta, "down"), grid, **opts)
        return up if up.report.i_energy <= down.report.i_energy else down

    sign = -1.0 if (isinstance(event, MeanShiftEvent)
                    and event.direction == "down") else +1.0
    obj = _PenalizedObjective(model, grid, event, sign)
    h = np.zeros((grid.nt, grid.na))
    trace: list = []
    converged = True
    penalty = penalty0
    it0 = 0
    viol = obj.violation(obj._forward(h)[-1])
    if viol > 0.0:
        for _ in range(rounds):
            h, _, viol, ok, it0 = _descend(obj, h, penalty, max_iter, gtol, trace, it0)
            converged = converged and ok
            penalty *= penalty_growth
        if isinstance(event, MeanShiftEvent):
            h = _rescale_to_feasible(obj, h)
            viol = obj.violation(obj._forward(h)[-1])

    control = Control(h, grid)
    if with_density:
        path = solve_controlled(model, control, grid)
        mpath = MeasurePath.from_cdf_path(path, kind=model.kind)
        report = rate_density(mpath, model.kind, floor=rate_floor)
    else:
        report = RateReport(i_density=math.nan,
                            psi=np.empty((0, 0)), floor_mass=math.nan)
    report.i_energy = control_energy(control)
    return MinimizeResult(control=control, report=report, converged=converged,
                          violation=viol, trace=trace)
